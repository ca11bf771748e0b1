#include "puat/checkpoint.hpp"

#include "puat/text.hpp"

#include <fstream>
#include <sstream>

namespace puat {
namespace {

constexpr const char* kMagic = "PUATCKPT";

template <class F>
void visit_store(const std::string& prefix, LayerStore& s, F&& f) {
  for (auto* p : s.parameters()) f(prefix + "/" + p->name, p->value);
  for (std::size_t i = 0; i < s.norm.size(); ++i) {
    f(prefix + "/norm" + std::to_string(i) + ".running_mean", s.norm[i].state.running_mean);
    f(prefix + "/norm" + std::to_string(i) + ".running_var", s.norm[i].state.running_var);
  }
  for (std::size_t i = 0; i < s.linear.size(); ++i) {
    if (!s.linear[i].spectral) continue;
    f(prefix + "/linear" + std::to_string(i) + ".sn_u", s.linear[i].sn.u);
    f(prefix + "/linear" + std::to_string(i) + ".sn_v", s.linear[i].sn.v);
  }
  for (std::size_t i = 0; i < s.conv.size(); ++i) {
    if (!s.conv[i].spectral) continue;
    f(prefix + "/conv" + std::to_string(i) + ".sn_u", s.conv[i].sn.u);
    f(prefix + "/conv" + std::to_string(i) + ".sn_v", s.conv[i].sn.v);
  }
}

template <class F>
void visit_tensors(ModelBundle& m, F&& f) {
  visit_store("C", m.C.layers, f);
  visit_store("teacher", m.teacher.layers, f);
  visit_store("G", m.G.layers, f);
  visit_store("D", m.D.layers, f);
  visit_store("A", m.A.layers, f);
}

std::string read_line(std::istream& in, const std::filesystem::path& file) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("truncated checkpoint " + file.string());
  return line;
}

std::string expect_key(const std::string& line, const std::string& key, const std::filesystem::path& file) {
  if (line.rfind(key + " ", 0) != 0) throw CheckpointError("corrupt checkpoint " + file.string() + ": expected '" + key + "'");
  return line.substr(key.size() + 1);
}

}  // namespace

std::string netspec_lines(const NetSpec& s) {
  std::ostringstream o;
  o << "classifier = " << s.classifier << '\n'
    << "classifier_depth = " << s.classifier_depth << '\n'
    << "classifier_width = " << s.classifier_width << '\n'
    << "generator_channels = " << s.generator_channels << '\n'
    << "discriminator_channels = " << s.discriminator_channels << '\n'
    << "attacker_hidden = " << s.attacker_hidden << '\n'
    << "noise_dim = " << s.noise_dim << '\n'
    << "label_embed_dim = " << s.label_embed_dim << '\n'
    << "power_iterations = " << s.power_iterations << '\n'
    << "attacker_init_scale = " << format_exact(s.attacker_init_scale) << '\n'
    << "attacker_clamp = " << format_exact(s.attacker_clamp) << '\n';
  return o.str();
}

bool set_netspec_field(NetSpec& s, const std::string& key, const std::string& value) {
  const auto as_int = [&] { return static_cast<int>(parse_integer(value)); };
  if (key == "classifier") s.classifier = trim(value);
  else if (key == "classifier_depth") s.classifier_depth = as_int();
  else if (key == "classifier_width") s.classifier_width = as_int();
  else if (key == "generator_channels") s.generator_channels = as_int();
  else if (key == "discriminator_channels") s.discriminator_channels = as_int();
  else if (key == "attacker_hidden") s.attacker_hidden = as_int();
  else if (key == "noise_dim") s.noise_dim = as_int();
  else if (key == "label_embed_dim") s.label_embed_dim = as_int();
  else if (key == "power_iterations") s.power_iterations = as_int();
  else if (key == "attacker_init_scale") s.attacker_init_scale = parse_number(value);
  else if (key == "attacker_clamp") s.attacker_clamp = parse_number(value);
  else return false;
  return true;
}

void save_checkpoint(const std::filesystem::path& file, const ModelBundle& bundle, const CheckpointMeta& meta) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  const std::filesystem::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    const std::string spec = netspec_lines(bundle.spec);
    out << kMagic << ' ' << kCheckpointVersion << '\n';
    out << "num_classes " << bundle.num_classes << '\n';
    out << "shape " << bundle.shape.image.channels << ' ' << bundle.shape.image.height << ' '
        << bundle.shape.image.width << ' ' << (bundle.shape.is_image ? 1 : 0) << '\n';
    out << "versions " << bundle.C.version << ' ' << bundle.teacher.version << ' ' << bundle.G.version << ' '
        << bundle.D.version << ' ' << bundle.A.version << '\n';
    out << "epoch " << meta.epoch << '\n' << "step " << meta.step << '\n';
    out << "rng " << meta.rng_state.size() << '\n' << meta.rng_state << '\n';
    out << "netspec " << spec.size() << '\n' << spec;

    ModelBundle& m = const_cast<ModelBundle&>(bundle);
    std::size_t count = 0;
    visit_tensors(m, [&](const std::string&, auto&) { ++count; });
    out << "tensors " << count << '\n';
    visit_tensors(m, [&](const std::string& label, auto& t) {
      out << label << ' ' << t.rows() << ' ' << t.cols() << '\n';
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
      out << '\n';
    });
    out << "end\n";
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

ModelBundle load_checkpoint(const std::filesystem::path& file, CheckpointMeta* meta) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CheckpointError("missing checkpoint " + file.string());
  std::istringstream head(read_line(in, file));
  std::string magic;
  int version = 0;
  head >> magic >> version;
  if (magic != kMagic) throw CheckpointError(file.string() + " is not a checkpoint");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + file.string());

  const int num_classes = static_cast<int>(parse_integer(expect_key(read_line(in, file), "num_classes", file)));
  std::istringstream sh(expect_key(read_line(in, file), "shape", file));
  DataShape shape;
  int is_image = 0;
  sh >> shape.image.channels >> shape.image.height >> shape.image.width >> is_image;
  shape.is_image = is_image != 0;
  std::istringstream vs(expect_key(read_line(in, file), "versions", file));
  std::uint64_t versions[5] = {};
  for (auto& v : versions) vs >> v;
  CheckpointMeta m;
  m.epoch = parse_integer(expect_key(read_line(in, file), "epoch", file));
  m.step = parse_integer(expect_key(read_line(in, file), "step", file));
  const auto rng_len = static_cast<std::size_t>(parse_integer(expect_key(read_line(in, file), "rng", file)));
  m.rng_state.resize(rng_len);
  in.read(m.rng_state.data(), static_cast<std::streamsize>(rng_len));
  read_line(in, file);
  const auto spec_len = static_cast<std::size_t>(parse_integer(expect_key(read_line(in, file), "netspec", file)));
  std::string spec_text(spec_len, '\0');
  in.read(spec_text.data(), static_cast<std::streamsize>(spec_len));
  NetSpec spec;
  for (const auto& line : split(spec_text, '\n')) {
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || !set_netspec_field(spec, trim(line.substr(0, eq)), line.substr(eq + 1)))
      throw CheckpointError("corrupt netspec line '" + line + "' in " + file.string());
  }

  ModelBundle bundle = build_models(spec, shape, num_classes, 0);
  const auto count = static_cast<std::size_t>(parse_integer(expect_key(read_line(in, file), "tensors", file)));
  std::size_t seen = 0;
  visit_tensors(bundle, [&](const std::string& label, auto& t) {
    std::istringstream th(read_line(in, file));
    std::string got;
    Eigen::Index rows = 0, cols = 0;
    th >> got >> rows >> cols;
    if (got != label || rows != t.rows() || cols != t.cols())
      throw CheckpointError("checkpoint tensor '" + got + "' does not match expected '" + label + "' in " + file.string());
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    read_line(in, file);
    ++seen;
  });
  if (seen != count || read_line(in, file) != "end") throw CheckpointError("corrupt tensor section in " + file.string());
  bundle.C.version = versions[0];
  bundle.teacher.version = versions[1];
  bundle.G.version = versions[2];
  bundle.D.version = versions[3];
  bundle.A.version = versions[4];
  if (meta) *meta = m;
  return bundle;
}

}  // namespace puat
