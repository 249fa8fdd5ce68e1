#include "srlab/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace srlab {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_tensor(const std::string& name, const Tensor& t) {
    if (name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + name.substr(0, 64));
    if (t.rank() > 0xFF) throw CheckpointError("tensor rank too large for '" + name + "'");
    put(static_cast<std::uint16_t>(name.size()));
    put_bytes(name.data(), name.size());
    put(static_cast<std::uint8_t>(t.dtype()));
    put(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put(static_cast<std::uint64_t>(d));
    visit_dtype(t.dtype(), [&]<typename T>() {
      auto d = t.data<T>();
      put_bytes(d.data(), d.size_bytes());
    });
  }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::size_t end, std::string source)
      : bytes_(bytes), end_(end), source_(std::move(source)) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw CheckpointError("truncated checkpoint " + source_);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::pair<std::string, Tensor> get_tensor() {
    const auto name_len = get<std::uint16_t>();
    std::string name(take(name_len), name_len);
    const auto dtype_code = get<std::uint8_t>();
    if (dtype_code > 1) throw CheckpointError("unknown dtype code " + std::to_string(dtype_code) + " for '" + name + "'");
    const auto rank = get<std::uint8_t>();
    Shape shape;
    for (int i = 0; i < rank; ++i) {
      const auto d = get<std::uint64_t>();
      if (d > (std::uint64_t{1} << 40)) throw CheckpointError("implausible dimension in '" + name + "'");
      shape.push_back(static_cast<std::int64_t>(d));
    }
    const auto dtype = static_cast<DType>(dtype_code);
    Tensor t = Tensor::zeros(shape, dtype);
    visit_dtype(dtype, [&]<typename T>() {
      auto d = t.data<T>();
      std::memcpy(d.data(), take(d.size_bytes()), d.size_bytes());
    });
    return {std::move(name), std::move(t)};
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
  std::size_t end_;
  std::string source_;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

bool is_spec_name(const std::string& name) { return name.rfind("spec.", 0) == 0; }

}  // namespace

SpecMap CheckpointContents::spec() const {
  SpecMap m;
  for (const auto& [name, t] : tensors)
    if (is_spec_name(name)) m[name.substr(5)] = t.item();
  if (m.empty()) throw CheckpointError("checkpoint carries no model description");
  return m;
}

void write_checkpoint(const fs::path& path, const NamedTensors& tensors, const NamedTensors& optimizer) {
  Writer w;
  w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) w.put_tensor(name, t);
  if (!optimizer.empty()) {
    w.put(static_cast<std::uint32_t>(optimizer.size()));
    for (const auto& [name, t] : optimizer) w.put_tensor(name, t);
  }
  w.put(crc_of(w.bytes().data(), w.bytes().size()));

  // Write to a sibling and rename so a crash never leaves a torn file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointContents read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFoundError("checkpoint not found: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError("not a checkpoint: " + path.string() + " (bad magic)");
  if (bytes.size() < sizeof kCheckpointMagic + 12) throw CheckpointError("truncated checkpoint " + path.string());
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body, 4);

  Reader r(bytes, body, path.string());
  r.take(sizeof kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  if (crc_of(bytes.data(), body) != stored_crc)
    throw CheckpointError("checkpoint " + path.string() + " is corrupt or truncated (CRC mismatch)");

  CheckpointContents c;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) c.tensors.push_back(r.get_tensor());
  if (!r.done()) {
    const auto opt_count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < opt_count; ++i) c.optimizer.push_back(r.get_tensor());
  }
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint " + path.string());
  return c;
}

void save_checkpoint(const Model& model, const fs::path& path, const Adam* optimizer) {
  NamedTensors tensors;
  for (const auto& [key, value] : model.spec()) tensors.emplace_back("spec." + key, Tensor::scalar(value, DType::f64));
  for (const auto& p : model.parameters()) tensors.emplace_back(p.name, p.value);
  NamedTensors opt;
  if (optimizer)
    for (const auto& [name, t] : optimizer->state()) opt.emplace_back("opt." + name, t);
  write_checkpoint(path, tensors, opt);
}

std::unique_ptr<Model> load_checkpoint(const fs::path& path, Adam* optimizer) {
  const auto contents = read_checkpoint(path);
  auto model = build_model(contents.spec());
  std::size_t loaded = 0;
  for (const auto& [name, t] : contents.tensors) {
    if (is_spec_name(name)) continue;
    if (!model->has_parameter(name)) throw CheckpointError("unknown tensor '" + name + "' in " + path.string());
    Parameter& p = model->parameter(name);
    if (p.value.shape() != t.shape() || p.value.dtype() != t.dtype())
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                            shape_str(p.value.shape()));
    p.value.copy_from(t);
    ++loaded;
  }
  if (loaded != model->parameters().size())
    throw CheckpointError("checkpoint " + path.string() + " covers " + std::to_string(loaded) + " of " +
                          std::to_string(model->parameters().size()) + " parameters");
  if (optimizer) {
    NamedTensors state;
    for (const auto& [name, t] : contents.optimizer) state.emplace_back(name.substr(4), t);
    optimizer->load_state(state);
  }
  return model;
}

std::size_t load_parameters(Model& model, const fs::path& path, const PartialLoad& selection) {
  const auto contents = read_checkpoint(path);
  std::size_t loaded = 0;
  for (const auto& [name, t] : contents.tensors) {
    if (is_spec_name(name) || name.compare(0, selection.source_prefix.size(), selection.source_prefix) != 0) continue;
    const std::string target = selection.target_prefix + name.substr(selection.source_prefix.size());
    if (!model.has_parameter(target))
      throw CheckpointError("unknown tensor name '" + target + "' on partial load from " + path.string());
    Parameter& p = model.parameter(target);
    if (p.value.shape() != t.shape())
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", '" + target +
                            "' expects " + shape_str(p.value.shape()));
    p.value.copy_from(t.to(p.value.dtype()));
    ++loaded;
  }
  return loaded;
}

}  // namespace srlab
