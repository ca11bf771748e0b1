#include "puat/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace puat {
namespace {

using Index = Eigen::Index;

Var embed_labels(Tape& tape, const LayerStore& s, int embed, const Var& y) {
  return ad::matmul(y, tape.param(s.extra[embed]));
}

Matrix normal_matrix(Index rows, Index cols, Scalar stddev, Rng& rng) {
  std::normal_distribution<Scalar> nd(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
  return m;
}

// Pre-activation wide residual block.
Var wide_block(Tape& tape, const LayerStore& s, const ResBlock& b, const Var& x, const ImageShape& in,
               ImageShape* out, NormMode mode) {
  Var o = ad::relu(s.norm[b.bn1].forward(tape, x, in, mode));
  ImageShape mid;
  Var h = s.conv[b.conv1].forward(tape, o, in, &mid);
  h = ad::relu(s.norm[b.bn2].forward(tape, h, mid, mode));
  h = s.conv[b.conv2].forward(tape, h, mid, out);
  Var sc = b.shortcut >= 0 ? s.conv[b.shortcut].forward(tape, o, in, nullptr) : x;
  return h + sc;
}

Var up_block(Tape& tape, const LayerStore& s, const ResBlock& b, const Var& x, const ImageShape& in,
             ImageShape* out, NormMode mode) {
  const ImageShape big{in.channels, in.height * 2, in.width * 2};
  Var o = ad::upsample2x(ad::relu(s.norm[b.bn1].forward(tape, x, in, mode)), in);
  ImageShape mid;
  Var h = s.conv[b.conv1].forward(tape, o, big, &mid);
  h = ad::relu(s.norm[b.bn2].forward(tape, h, mid, mode));
  h = s.conv[b.conv2].forward(tape, h, mid, out);
  Var sc = s.conv[b.shortcut].forward(tape, ad::upsample2x(x, in), big, nullptr);
  return h + sc;
}

Var down_block(Tape& tape, const LayerStore& s, const ResBlock& b, const Var& x, const ImageShape& in,
               ImageShape* out) {
  ImageShape mid;
  Var h = b.first ? x : ad::relu(x);
  h = s.conv[b.conv1].forward(tape, h, in, &mid);
  h = ad::relu(h);
  ImageShape res;
  h = s.conv[b.conv2].forward(tape, h, mid, &res);
  Var sc = x;
  ImageShape sc_shape = in;
  if (b.first) {
    if (b.down) {
      sc = ad::avg_pool2x(sc, sc_shape);
      sc_shape = {sc_shape.channels, sc_shape.height / 2, sc_shape.width / 2};
    }
    if (b.shortcut >= 0) sc = s.conv[b.shortcut].forward(tape, sc, sc_shape, nullptr);
  } else {
    if (b.shortcut >= 0) sc = s.conv[b.shortcut].forward(tape, sc, sc_shape, &sc_shape);
    if (b.down) sc = ad::avg_pool2x(sc, sc_shape);
  }
  if (b.down) {
    h = ad::avg_pool2x(h, res);
    res = {res.channels, res.height / 2, res.width / 2};
  }
  *out = res;
  return h + sc;
}

bool is_pow2(Index v) { return v > 0 && (v & (v - 1)) == 0; }

void build_classifier(Classifier& c, const NetSpec& spec, Rng& rng) {
  auto& s = c.layers;
  const Role r = Role::Classifier;
  if (spec.classifier == "mlp") {
    Index width = c.shape.dim();
    for (int i = 0; i < spec.classifier_depth; ++i) {
      c.hidden.push_back(s.add_linear("C.hidden" + std::to_string(i), width, spec.classifier_width, r, rng));
      width = spec.classifier_width;
    }
    c.head = s.add_linear("C.head", width, c.num_classes, r, rng);
    return;
  }
  const int n = (spec.classifier_depth - 4) / 6;
  const Index k = spec.classifier_width;
  const Index widths[3] = {16 * k, 32 * k, 64 * k};
  c.stem = s.add_conv("C.stem", c.shape.image.channels, 16, 3, 1, 1, r, rng);
  Index in = 16;
  for (int g = 0; g < 3; ++g) {
    for (int i = 0; i < n; ++i) {
      const std::string name = "C.group" + std::to_string(g) + ".block" + std::to_string(i);
      const Index stride = (g > 0 && i == 0) ? 2 : 1;
      ResBlock b;
      b.bn1 = s.add_norm(name + ".bn1", in, r);
      b.conv1 = s.add_conv(name + ".conv1", in, widths[g], 3, stride, 1, r, rng);
      b.bn2 = s.add_norm(name + ".bn2", widths[g], r);
      b.conv2 = s.add_conv(name + ".conv2", widths[g], widths[g], 3, 1, 1, r, rng);
      if (in != widths[g] || stride != 1) b.shortcut = s.add_conv(name + ".shortcut", in, widths[g], 1, stride, 0, r, rng);
      c.blocks.push_back(b);
      in = widths[g];
    }
  }
  c.final_bn = s.add_norm("C.final_bn", in, r);
  c.head = s.add_linear("C.head", in, c.num_classes, r, rng);
}

void build_generator(Generator& g, const NetSpec& spec, Rng& rng) {
  auto& s = g.layers;
  const Role r = Role::Generator;
  g.embed = s.add_extra("G.embed", normal_matrix(g.num_classes, spec.label_embed_dim, 1.0, rng), r);
  const Index in = spec.noise_dim + spec.label_embed_dim;
  const Index w = spec.generator_channels;
  if (!g.shape.is_image) {
    g.dense.push_back(s.add_linear("G.dense0", in, w, r, rng));
    g.dense.push_back(s.add_linear("G.dense1", w, w, r, rng));
    g.dense.push_back(s.add_linear("G.dense2", w, g.shape.dim(), r, rng));
    return;
  }
  g.base_channels = static_cast<int>(w);
  g.dense.push_back(s.add_linear("G.dense0", in, w * 16, r, rng));
  for (Index size = 4, i = 0; size < g.shape.image.height; size *= 2, ++i) {
    const std::string name = "G.block" + std::to_string(i);
    ResBlock b;
    b.up = true;
    b.bn1 = s.add_norm(name + ".bn1", w, r);
    b.conv1 = s.add_conv(name + ".conv1", w, w, 3, 1, 1, r, rng);
    b.bn2 = s.add_norm(name + ".bn2", w, r);
    b.conv2 = s.add_conv(name + ".conv2", w, w, 3, 1, 1, r, rng);
    b.shortcut = s.add_conv(name + ".shortcut", w, w, 1, 1, 0, r, rng);
    g.blocks.push_back(b);
  }
  g.final_bn = s.add_norm("G.final_bn", w, r);
  g.to_image = s.add_conv("G.to_image", w, g.shape.image.channels, 1, 1, 0, r, rng);
}

void build_discriminator(Discriminator& d, const NetSpec& spec, Rng& rng) {
  auto& s = d.layers;
  const Role r = Role::Discriminator;
  d.embed = s.add_extra("D.embed", normal_matrix(d.num_classes, spec.label_embed_dim, 1.0, rng), r);
  const Index w = spec.discriminator_channels;
  if (!d.shape.is_image) {
    d.dense.push_back(s.add_linear("D.dense0", d.shape.dim() + spec.label_embed_dim, w, r, rng, true));
    d.dense.push_back(s.add_linear("D.dense1", w, w, r, rng, true));
    d.head = s.add_linear("D.head", w, 1, r, rng, true);
    return;
  }
  Index in = d.shape.image.channels + spec.label_embed_dim;
  for (int i = 0; i < 4; ++i) {
    const std::string name = "D.block" + std::to_string(i);
    ResBlock b;
    b.first = i == 0;
    b.down = i < 2;
    b.conv1 = s.add_conv(name + ".conv1", in, w, 3, 1, 1, r, rng, true);
    b.conv2 = s.add_conv(name + ".conv2", w, w, 3, 1, 1, r, rng, true);
    if (b.down || in != w) b.shortcut = s.add_conv(name + ".shortcut", in, w, 1, 1, 0, r, rng, true);
    d.blocks.push_back(b);
    in = w;
  }
  d.head = s.add_linear("D.head", w, 1, r, rng, true);
}

void build_attacker(Attacker& a, const NetSpec& spec, Rng& rng) {
  auto& s = a.layers;
  const Role r = Role::Attacker;
  a.embed = s.add_extra("A.embed", normal_matrix(a.num_classes, spec.label_embed_dim, 1.0, rng), r);
  const Index w = spec.attacker_hidden;
  a.input = s.add_linear("A.input", spec.noise_dim + spec.label_embed_dim, w, r, rng);
  for (int i = 0; i < 2; ++i) {
    a.residual.push_back(s.add_linear("A.res" + std::to_string(i) + ".fc1", w, w, r, rng));
    a.residual.push_back(s.add_linear("A.res" + std::to_string(i) + ".fc2", w, w, r, rng));
  }
  a.head = s.add_linear("A.head", w, spec.noise_dim, r, rng, false, spec.attacker_init_scale);
}

}  // namespace

void validate(const NetSpec& spec, const DataShape& shape, int num_classes) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("net." + field + ": " + why);
  };
  if (num_classes < 2) fail("num_classes", "need at least two classes");
  if (shape.dim() <= 0) fail("shape", "empty data shape");
  if (spec.classifier != "mlp" && spec.classifier != "wrn") fail("classifier", "unknown architecture '" + spec.classifier + "'");
  if (spec.classifier == "mlp" && spec.classifier_depth < 0) fail("classifier_depth", "must be >= 0");
  if (spec.classifier == "wrn") {
    if (!shape.is_image) fail("classifier", "wrn needs image data");
    if (spec.classifier_depth < 10 || (spec.classifier_depth - 4) % 6 != 0) fail("classifier_depth", "wrn depth must be 6n+4 with n >= 1");
  }
  if (spec.classifier_width <= 0) fail("classifier_width", "must be positive");
  if (spec.generator_channels <= 0) fail("generator_channels", "must be positive");
  if (spec.discriminator_channels <= 0) fail("discriminator_channels", "must be positive");
  if (spec.attacker_hidden <= 0) fail("attacker_hidden", "must be positive");
  if (spec.noise_dim <= 0) fail("noise_dim", "must be positive");
  if (spec.label_embed_dim <= 0) fail("label_embed_dim", "must be positive");
  if (spec.power_iterations < 1) fail("power_iterations", "must be >= 1");
  if (!(spec.attacker_init_scale >= 0.0)) fail("attacker_init_scale", "must be >= 0");
  if (!(spec.attacker_clamp >= 0.0)) fail("attacker_clamp", "must be >= 0");
  if (shape.is_image) {
    const auto& im = shape.image;
    if (im.height != im.width) fail("shape", "images must be square");
    if (im.height < 4 || im.height % 4 != 0 || !is_pow2(im.height / 4)) fail("shape", "image side must be 4 * 2^k");
  }
}

Classifier::Output Classifier::forward(Tape& tape, const Var& x, NormMode mode) const {
  if (x.cols() != shape.dim()) throw std::invalid_argument("classifier input has wrong width");
  Var h = x;
  if (arch == "mlp") {
    for (int i : hidden) h = ad::relu(layers.linear[i].forward(tape, h));
    return {layers.linear[head].forward(tape, h), h};
  }
  ImageShape s;
  h = layers.conv[stem].forward(tape, h, shape.image, &s);
  for (const auto& b : blocks) {
    ImageShape next;
    h = wide_block(tape, layers, b, h, s, &next, mode);
    s = next;
  }
  h = ad::relu(layers.norm[final_bn].forward(tape, h, s, mode));
  Var f = ad::global_avg_pool(h, s);
  return {layers.linear[head].forward(tape, f), f};
}

Var Generator::raw(Tape& tape, const Var& z, const Var& y, NormMode mode) const {
  if (z.cols() != noise_dim || y.cols() != num_classes || z.rows() != y.rows())
    throw std::invalid_argument("generator input shape mismatch");
  Var h = ad::concat_cols(z, embed_labels(tape, layers, embed, y));
  if (!shape.is_image) {
    h = ad::relu(layers.linear[dense[0]].forward(tape, h));
    h = ad::relu(layers.linear[dense[1]].forward(tape, h));
    return ad::tanh(layers.linear[dense[2]].forward(tape, h));
  }
  h = layers.linear[dense[0]].forward(tape, h);
  ImageShape s{base_channels, 4, 4};
  for (const auto& b : blocks) {
    ImageShape next;
    h = up_block(tape, layers, b, h, s, &next, mode);
    s = next;
  }
  h = ad::relu(layers.norm[final_bn].forward(tape, h, s, mode));
  return ad::tanh(layers.conv[to_image].forward(tape, h, s, nullptr));
}

Var Generator::forward(Tape& tape, const Var& z, const Var& y, NormMode mode) const {
  return ad::add_scalar(ad::scale(raw(tape, z, y, mode), 0.5), 0.5);
}

Var Discriminator::score(Tape& tape, const Var& x, const Var& y, NormMode mode) const {
  (void)mode;
  if (x.cols() != shape.dim() || y.cols() != num_classes || x.rows() != y.rows())
    throw std::invalid_argument("discriminator input shape mismatch");
  Var e = embed_labels(tape, layers, embed, y);
  if (!shape.is_image) {
    Var h = ad::concat_cols(x, e);
    h = ad::leaky_relu(layers.linear[dense[0]].forward(tape, h), 0.2);
    h = ad::leaky_relu(layers.linear[dense[1]].forward(tape, h), 0.2);
    return layers.linear[head].forward(tape, h);
  }
  const auto& im = shape.image;
  Var h = ad::concat_cols(x, ad::broadcast_planes(e, im.height, im.width));
  ImageShape s{im.channels + e.cols(), im.height, im.width};
  for (const auto& b : blocks) {
    ImageShape next;
    h = down_block(tape, layers, b, h, s, &next);
    s = next;
  }
  h = ad::global_avg_pool(ad::relu(h), s);
  return layers.linear[head].forward(tape, h);
}

Var Attacker::forward(Tape& tape, const Var& z, const Var& y) const {
  if (z.cols() != noise_dim || y.cols() != num_classes || z.rows() != y.rows())
    throw std::invalid_argument("attacker input shape mismatch");
  Var h = ad::relu(layers.linear[input].forward(tape, ad::concat_cols(z, embed_labels(tape, layers, embed, y))));
  for (std::size_t i = 0; i + 1 < residual.size(); i += 2) {
    Var r = ad::relu(layers.linear[residual[i]].forward(tape, h));
    h = h + layers.linear[residual[i + 1]].forward(tape, r);
  }
  Var za = z + layers.linear[head].forward(tape, ad::relu(h));
  if (clamp > 0.0) za = ad::scale(ad::tanh(ad::scale(za, 1.0 / clamp)), clamp);
  return za;
}

ModelBundle build_models(const NetSpec& spec, const DataShape& shape, int num_classes, std::uint64_t seed) {
  validate(spec, shape, num_classes);
  Rng rng(seed);
  ModelBundle m;
  m.spec = spec;
  m.shape = shape;
  m.num_classes = num_classes;

  m.C.arch = spec.classifier;
  m.C.shape = shape;
  m.C.num_classes = num_classes;
  build_classifier(m.C, spec, rng);
  m.teacher = m.C;
  m.teacher.layers.set_role(Role::Teacher);

  m.G.shape = shape;
  m.G.noise_dim = spec.noise_dim;
  m.G.num_classes = num_classes;
  build_generator(m.G, spec, rng);

  m.D.shape = shape;
  m.D.num_classes = num_classes;
  build_discriminator(m.D, spec, rng);
  spectral_normalize(m.D, spec.power_iterations);

  m.A.noise_dim = spec.noise_dim;
  m.A.num_classes = num_classes;
  m.A.clamp = spec.attacker_clamp;
  build_attacker(m.A, spec, rng);
  return m;
}

namespace {

template <class F>
Matrix chunked(const Matrix& x, Eigen::Index out_cols, F&& f) {
  constexpr Eigen::Index chunk = 512;
  Matrix out(x.rows(), out_cols);
  for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
    const Eigen::Index n = std::min(chunk, x.rows() - start);
    out.middleRows(start, n) = f(Matrix(x.middleRows(start, n)));
  }
  return out;
}

}  // namespace

Matrix classify(const Classifier& c, const Matrix& x) {
  return chunked(x, c.num_classes, [&](const Matrix& part) {
    Tape tape;
    return Matrix(ad::softmax_rows(c.logits(tape, tape.constant(part), NormMode::Eval)).value());
  });
}

Matrix features(const Classifier& c, const Matrix& x) {
  if (x.rows() == 0) return Matrix(0, 0);
  Eigen::Index width = 0;
  {
    Tape tape;
    width = c.forward(tape, tape.constant(x.topRows(1)), NormMode::Eval).features.cols();
  }
  return chunked(x, width, [&](const Matrix& part) {
    Tape tape;
    return Matrix(c.forward(tape, tape.constant(part), NormMode::Eval).features.value());
  });
}

void ema_update(Classifier& teacher, const Classifier& student, Scalar decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("ema decay must lie in [0, 1]");
  auto t = teacher.layers.parameters();
  auto s = student.layers.parameters();
  if (t.size() != s.size()) throw std::invalid_argument("ema_update: architecture mismatch");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i]->value.rows() != s[i]->value.rows() || t[i]->value.cols() != s[i]->value.cols())
      throw std::invalid_argument("ema_update: shape mismatch at " + s[i]->name);
    t[i]->value = decay * t[i]->value + (1.0 - decay) * s[i]->value;
  }
  for (std::size_t i = 0; i < teacher.layers.norm.size(); ++i) teacher.layers.norm[i].state = student.layers.norm[i].state;
  ++teacher.version;
}

void spectral_normalize(Discriminator& d, int iterations) {
  for (auto& l : d.layers.linear)
    if (l.spectral) power_iterate(l.weight.value, l.sn, iterations);
  for (auto& c : d.layers.conv)
    if (c.spectral) power_iterate(c.weight.value, c.sn, iterations);
}

Matrix one_hot(const std::vector<int>& labels, int num_classes) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw std::out_of_range("label outside [0, num_classes)");
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return m;
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index j;
    m.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

}  // namespace puat
