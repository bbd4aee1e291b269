#include <bit>
#include <cstring>
#include <fstream>

#include "decomamba/train.hpp"

namespace dm {

namespace fs = std::filesystem;

namespace {

class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  template <typename T>
  void value(T v) {
    if constexpr (std::is_same_v<T, float>) {
      u32(std::bit_cast<uint32_t>(v));
    } else {
      f64(v);
    }
  }
  void bytes(const std::string& s) { buf_ += s; }
  void string(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s);
  }
  template <typename T>
  void record(const std::string& path, const Shape& shape, std::span<const T> values) {
    string(path);
    u8(static_cast<uint8_t>(dtype_of<T>()));
    u32(static_cast<uint32_t>(shape.size()));
    for (int64_t d : shape) u64(static_cast<uint64_t>(d));
    for (T v : values) value(v);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string source) : buf_(std::move(data)), source_(std::move(source)) {}

  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf_[pos_++]);
  }
  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
    return v;
  }
  uint64_t u64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string string() { return bytes(u32()); }
  bool at_end() const { return pos_ == buf_.size(); }
  FormatError error(const std::string& why) const {
    return FormatError(source_ + ": " + why + " (offset " + std::to_string(pos_) + ")");
  }

 private:
  void need(size_t n) const {
    if (buf_.size() - pos_ < n) throw error("truncated checkpoint");
  }
  std::string buf_;
  std::string source_;
  size_t pos_ = 0;
};

struct Record {
  std::string path;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;  // widened; narrowed back exactly on restore
};

Record read_record(Reader& r) {
  Record rec;
  rec.path = r.string();
  const uint8_t code = r.u8();
  if (code != static_cast<uint8_t>(DType::f32) && code != static_cast<uint8_t>(DType::f64)) {
    throw r.error("unknown dtype code " + std::to_string(code) + " for " + rec.path);
  }
  rec.dtype = static_cast<DType>(code);
  const uint32_t rank = r.u32();
  if (rank > 8) throw r.error("implausible rank for " + rec.path);
  uint64_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint64_t d = r.u64();
    if (d > (uint64_t(1) << 32)) throw r.error("implausible dimension for " + rec.path);
    rec.shape.push_back(static_cast<int64_t>(d));
    count *= d;
    if (count > (uint64_t(1) << 34)) throw r.error("implausible size for " + rec.path);
  }
  rec.values.resize(count);
  for (auto& v : rec.values) {
    v = rec.dtype == DType::f32 ? double(std::bit_cast<float>(r.u32())) : r.f64();
  }
  return rec;
}

std::vector<Record> read_records(Reader& r) {
  const uint64_t n = r.u64();
  if (n > (uint64_t(1) << 24)) throw r.error("implausible record count");
  std::vector<Record> out;
  for (uint64_t i = 0; i < n; ++i) out.push_back(read_record(r));
  return out;
}

struct Parsed {
  ModelConfig config;
  std::vector<Record> params, buffers;
  bool has_optimizer = false;
  int64_t adam_t = 0;
  AdamWOptions options;
  std::vector<Record> moments;
  int64_t global_step = 0;
};

Reader open(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), {});
  return Reader(std::move(data), path.string());
}

ModelConfig read_header(Reader& r) {
  if (r.bytes(4) != "DMCK") throw r.error("bad magic, not a checkpoint");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw r.error("unsupported checkpoint version " + std::to_string(version));
  const std::string text = r.string();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw r.error(std::string("config echo is not JSON: ") + e.what());
  }
  try {
    return model_config_from_json(j);
  } catch (const ConfigError& e) {
    throw r.error(std::string("invalid config echo: ") + e.what());
  }
}

Parsed parse(const fs::path& path) {
  Reader r = open(path);
  Parsed p;
  p.config = read_header(r);
  p.params = read_records(r);
  p.buffers = read_records(r);
  const uint8_t has_opt = r.u8();
  if (has_opt > 1) throw r.error("bad optimizer flag");
  p.has_optimizer = has_opt == 1;
  if (p.has_optimizer) {
    p.adam_t = static_cast<int64_t>(r.u64());
    p.options.lr = r.f64();
    p.options.beta1 = r.f64();
    p.options.beta2 = r.f64();
    p.options.eps = r.f64();
    p.options.weight_decay = r.f64();
    p.moments = read_records(r);
  }
  p.global_step = static_cast<int64_t>(r.u64());
  if (!r.at_end()) throw r.error("trailing bytes after checkpoint");
  return p;
}

template <typename T>
void restore(const std::vector<Record>& records, const std::vector<typename ParamStore<T>::Entry>& entries,
             const char* section, const fs::path& path) {
  if (records.size() != entries.size()) {
    throw FormatError(path.string() + ": " + section + " count " + std::to_string(records.size()) +
                      " does not match the model's " + std::to_string(entries.size()));
  }
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const auto& e = entries[i];
    if (rec.path != e.path || rec.shape != e.value.shape()) {
      throw FormatError(path.string() + ": " + section + " record '" + rec.path + "' " +
                        shape_str(rec.shape) + " does not match model tensor '" + e.path + "' " +
                        shape_str(e.value.shape()));
    }
    if (rec.dtype != dtype_of<T>()) throw FormatError(path.string() + ": dtype mismatch for " + rec.path);
  }
}

template <typename T>
void copy_values(const Record& rec, std::span<T> dst) {
  for (size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(rec.values[k]);
}

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& path, const Model<T>& model, const AdamW<T>* optimizer,
                     int64_t global_step) {
  Writer w;
  w.bytes("DMCK");
  w.u32(kCheckpointVersion);
  w.string(to_json(model.config()).dump());
  const auto& params = model.store().params();
  w.u64(params.size());
  for (const auto& e : params) w.record<T>(e.path, e.value.shape(), e.value.data());
  const auto& buffers = model.store().buffers();
  w.u64(buffers.size());
  for (const auto& e : buffers) w.record<T>(e.path, e.value.shape(), e.value.data());
  w.u8(optimizer ? 1 : 0);
  if (optimizer) {
    const auto& o = optimizer->options();
    w.u64(static_cast<uint64_t>(optimizer->steps_taken()));
    w.f64(o.lr);
    w.f64(o.beta1);
    w.f64(o.beta2);
    w.f64(o.eps);
    w.f64(o.weight_decay);
    w.u64(2 * params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      w.record<T>("adamw.m." + params[i].path, params[i].value.shape(), optimizer->first_moments()[i]);
      w.record<T>("adamw.v." + params[i].path, params[i].value.shape(), optimizer->second_moments()[i]);
    }
  }
  w.u64(static_cast<uint64_t>(global_step));

  // Write beside the target and rename so a failed save never leaves a partial file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const fs::path& path) {
  const Parsed p = parse(path);
  LoadedCheckpoint<T> out;
  out.model = std::make_unique<Model<T>>(p.config);
  auto& store = out.model->store();
  restore<T>(p.params, store.params(), "parameter", path);
  restore<T>(p.buffers, store.buffers(), "buffer", path);
  for (size_t i = 0; i < p.params.size(); ++i) {
    auto t = store.params()[i].value;
    copy_values<T>(p.params[i], t.data());
  }
  for (size_t i = 0; i < p.buffers.size(); ++i) {
    auto t = store.buffers()[i].value;
    copy_values<T>(p.buffers[i], t.data());
  }
  if (p.has_optimizer) {
    out.optimizer = std::make_unique<AdamW<T>>(store, p.options);
    const auto& params = store.params();
    if (p.moments.size() != 2 * params.size()) throw FormatError(path.string() + ": optimizer state size mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
      for (int which = 0; which < 2; ++which) {
        const auto& rec = p.moments[2 * i + static_cast<size_t>(which)];
        const std::string expected = std::string(which ? "adamw.v." : "adamw.m.") + params[i].path;
        if (rec.path != expected || rec.shape != params[i].value.shape() || rec.dtype != dtype_of<T>()) {
          throw FormatError(path.string() + ": optimizer record '" + rec.path + "' does not match '" + expected + "'");
        }
        auto& dst = which ? out.optimizer->second_moments()[i] : out.optimizer->first_moments()[i];
        copy_values<T>(rec, std::span<T>(dst));
      }
    }
    out.optimizer->set_steps_taken(p.adam_t);
  }
  out.global_step = p.global_step;
  return out;
}

ModelConfig read_checkpoint_config(const fs::path& path) {
  Reader r = open(path);
  return read_header(r);
}

int64_t checkpoint_param_elements(const fs::path& path) {
  const Parsed p = parse(path);
  int64_t n = 0;
  for (const auto& rec : p.params) n += static_cast<int64_t>(rec.values.size());
  return n;
}

#define DM_INSTANTIATE(T)                                                                        \
  template void save_checkpoint(const fs::path&, const Model<T>&, const AdamW<T>*, int64_t);     \
  template LoadedCheckpoint<T> load_checkpoint<T>(const fs::path&);

DM_INSTANTIATE(float)
DM_INSTANTIATE(double)
#undef DM_INSTANTIATE

}  // namespace dm
