#include "srlab/config.hpp"

#include <fstream>
#include <sstream>

namespace srlab {

namespace fs = std::filesystem;

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
  static const std::vector<std::pair<std::string, std::string>> d = {
      {"model.kind", "baseline"},
      {"model.scale", "2"},
      {"model.n_blocks", "4"},
      {"model.n_feats", "16"},
      {"model.kernel", "3"},
      {"model.upsampler", "subpixel_direct"},
      {"model.residual_scale_init", "0.1"},
      {"model.residual_scale_trainable", "true"},
      {"model.denoiser_depth", "7"},
      {"model.denoiser_feats", "16"},
      {"model.denoiser_kernel", "3"},
      {"model.denoiser_residual", "true"},
      {"model.bridge_kernel", "5"},
      {"model.levels", "2"},
      {"model.fuse_kernel", "3"},
      {"model.dtype", "f32"},
      {"model.seed", "0"},
      {"model.denoiser_ckpt", ""},
      {"model.sr_ckpt", ""},
      {"train.steps", "2000"},
      {"train.batch", "16"},
      {"train.lr", "0.0001"},
      {"train.lr_halve_every", "200000"},
      {"train.loss", "l1"},
      {"train.edge_weight", "0.1"},
      {"train.seed", "0"},
      {"train.val_every", "100"},
      {"train.checkpoint_every", "1000"},
      {"train.adrsr_level_steps", "500"},
      {"train.adrsr_joint_steps", "500"},
      {"data.scale", "2"},
      {"data.blur_sigma", "0"},
      {"data.noise_sigma", "0"},
      {"data.seed", "0"},
      {"data.lr_patch", "48"},
      {"data.augment_flips", "true"},
      {"data.augment_rot90", "true"},
      {"data.augment_rgb_shuffle", "false"},
      {"data.per_image_mean_shift", "true"},
      {"data.val_dir", ""},
      {"data.val_list", ""},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(defaults()) {}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, _] : defaults()) out.push_back(key);
    return out;
  }();
  return k;
}

std::string& RunConfig::slot(const std::string& dotted_key) {
  for (auto& [k, v] : values_)
    if (k == dotted_key) return v;
  throw ConfigError("unknown config key '" + dotted_key + "'");
}

const std::string& RunConfig::get(const std::string& dotted_key) const {
  for (const auto& [k, v] : values_)
    if (k == dotted_key) return v;
  throw ConfigError("unknown config key '" + dotted_key + "'");
}

void RunConfig::set(const std::string& dotted_key, const std::string& value) { slot(dotted_key) = value; }

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::merge(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto where = origin + ":" + std::to_string(line_no);
    if (const auto hash = line.find_first_of("#;"); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "data")
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside of a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c;
  c.merge(buf.str(), path.string());
  return c;
}

std::string RunConfig::resolved_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << "[" << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << value << "\n";
  }
  return out.str();
}

void RunConfig::write(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << resolved_text();
}

std::int64_t RunConfig::integer(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

double RunConfig::real(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

bool RunConfig::boolean(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

ModelKind RunConfig::kind() const { return parse_model_kind(get("model.kind")); }

CompositeSpec RunConfig::composite() const {
  CompositeSpec c;
  c.kind = kind();
  c.sr.n_blocks = static_cast<int>(integer("model.n_blocks"));
  c.sr.n_feats = static_cast<int>(integer("model.n_feats"));
  c.sr.kernel = static_cast<int>(integer("model.kernel"));
  c.sr.scale = static_cast<int>(integer("model.scale"));
  c.sr.upsampler = parse_upsampler(get("model.upsampler"));
  c.sr.residual_scale_init = real("model.residual_scale_init");
  c.sr.residual_scale_trainable = boolean("model.residual_scale_trainable");
  c.denoiser.depth = static_cast<int>(integer("model.denoiser_depth"));
  c.denoiser.n_feats = static_cast<int>(integer("model.denoiser_feats"));
  c.denoiser.kernel = static_cast<int>(integer("model.denoiser_kernel"));
  c.denoiser.residual_output = boolean("model.denoiser_residual");
  c.bridge_kernel = static_cast<int>(integer("model.bridge_kernel"));
  c.levels = static_cast<int>(integer("model.levels"));
  c.fuse_kernel = static_cast<int>(integer("model.fuse_kernel"));
  return c;
}

BuildOptions RunConfig::build_options() const {
  BuildOptions o;
  o.seed = static_cast<std::uint64_t>(integer("model.seed"));
  const auto& d = get("model.dtype");
  if (d == "f32") o.dtype = DType::f32;
  else if (d == "f64") o.dtype = DType::f64;
  else throw ConfigError("model.dtype: expected f32 or f64, got '" + d + "'");
  return o;
}

bool RunConfig::per_image_mean_shift() const { return boolean("data.per_image_mean_shift"); }

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.steps = integer("train.steps");
  t.batch = static_cast<int>(integer("train.batch"));
  t.lr = real("train.lr");
  t.lr_halve_every = integer("train.lr_halve_every");
  t.loss = parse_loss_kind(get("train.loss"));
  t.edge_weight = real("train.edge_weight");
  t.seed = static_cast<std::uint64_t>(integer("train.seed"));
  t.val_every = integer("train.val_every");
  t.checkpoint_every = integer("train.checkpoint_every");
  t.validate();
  return t;
}

DegradationSpec RunConfig::degradation() const {
  DegradationSpec d;
  d.scale = static_cast<int>(integer("data.scale"));
  d.blur_sigma = real("data.blur_sigma");
  d.noise_sigma = real("data.noise_sigma");
  d.seed = static_cast<std::uint64_t>(integer("data.seed"));
  d.validate();
  return d;
}

PatchConfig RunConfig::patch() const {
  PatchConfig p;
  p.lr_patch = static_cast<int>(integer("data.lr_patch"));
  p.scale = static_cast<int>(integer("data.scale"));
  p.augment_flips = boolean("data.augment_flips");
  p.augment_rot90 = boolean("data.augment_rot90");
  p.augment_rgb_shuffle = boolean("data.augment_rgb_shuffle");
  p.per_image_mean_shift = per_image_mean_shift();
  p.seed = static_cast<std::uint64_t>(integer("train.seed"));
  return p;
}

std::int64_t RunConfig::adrsr_level_steps() const { return integer("train.adrsr_level_steps"); }
std::int64_t RunConfig::adrsr_joint_steps() const { return integer("train.adrsr_joint_steps"); }

}  // namespace srlab
