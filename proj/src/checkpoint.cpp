#include "hstmrf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace hstmrf {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'T', 'M'};

class Writer {
 public:
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float f) { u32(std::bit_cast<uint32_t>(f)); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* p, size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& b, const std::string& source) : b_(b), source_(source) {}

  void need(size_t n, const char* what) {
    if (pos_ + n > b_.size())
      throw CheckpointError("corrupt checkpoint " + source_ + ": truncated while reading " + what +
                            " at byte " + std::to_string(pos_));
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(b_[pos_++])) << (8 * i);
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(b_[pos_++])) << (8 * i);
    return v;
  }
  std::string str(const char* what) {
    const uint32_t n = u32(what);
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  size_t pos() const { return pos_; }

 private:
  const std::string& b_;
  const std::string& source_;
  size_t pos_ = 0;
};

std::vector<float> as_floats(const Tensor& t) {
  std::vector<float> out;
  out.reserve(static_cast<size_t>(t.numel()));
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : t.data<T>()) out.push_back(static_cast<float>(v));
  });
  return out;
}

void assign(Tensor& t, const std::vector<float>& v) {
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(v[i]);
  });
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const CheckpointEntry& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(c.version);
  w.str(c.config_text);
  w.u64(c.step);
  w.u64(c.seed);
  w.u32(static_cast<uint32_t>(c.entries.size()));
  for (const CheckpointEntry& e : c.entries) {
    w.str(e.name);
    w.u32(static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) w.u32(static_cast<uint32_t>(d));
    for (float f : e.data) w.f32(f);
  }
  return w.take();
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.raw(4, "magic") != std::string(kMagic, 4))
    throw CheckpointError("corrupt checkpoint " + source + ": bad magic (expected HSTM)");
  Checkpoint c;
  c.version = r.u32("version");
  if (c.version != kCheckpointVersion)
    throw CheckpointError("checkpoint " + source + " has version " + std::to_string(c.version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion));
  c.config_text = r.str("config");
  c.step = r.u64("step");
  c.seed = r.u64("seed");
  const uint32_t count = r.u32("entry count");
  for (uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    e.name = r.str("entry name");
    const uint32_t rank = r.u32("rank");
    if (rank > 8) throw CheckpointError("corrupt checkpoint " + source + ": implausible rank for '" + e.name + "'");
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      e.shape.push_back(r.u32("extent"));
      n *= e.shape.back();
    }
    r.need(static_cast<size_t>(n) * 4, "tensor data");
    e.data.resize(static_cast<size_t>(n));
    for (float& f : e.data) f = std::bit_cast<float>(r.u32("tensor data"));
    c.entries.push_back(std::move(e));
  }
  if (!r.done())
    throw CheckpointError("corrupt checkpoint " + source + ": trailing bytes after entry " +
                          std::to_string(count));
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for checkpoint '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw CheckpointError("cannot move checkpoint into place at '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), "'" + path + "'");
}

Checkpoint capture(const ParamStore& params, const AdamW* opt, uint64_t step, uint64_t seed,
                   const std::string& config_text) {
  Checkpoint c;
  c.config_text = config_text;
  c.step = step;
  c.seed = seed;
  for (const auto& e : params.entries()) c.entries.push_back({e.name, e.tensor.shape(), as_floats(e.tensor)});
  if (opt) {
    const auto names = params.names(true);
    for (size_t k = 0; k < names.size(); ++k)
      c.entries.push_back({"optim.m/" + names[k], opt->m[k].shape(), as_floats(opt->m[k])});
    for (size_t k = 0; k < names.size(); ++k)
      c.entries.push_back({"optim.v/" + names[k], opt->v[k].shape(), as_floats(opt->v[k])});
  }
  return c;
}

void restore(const Checkpoint& c, ParamStore& params, AdamW* opt) {
  std::map<std::string, Tensor> targets;
  for (const auto& e : params.entries()) targets[e.name] = e.tensor;
  if (opt) {
    const auto names = params.names(true);
    for (size_t k = 0; k < names.size(); ++k) {
      targets["optim.m/" + names[k]] = opt->m[k];
      targets["optim.v/" + names[k]] = opt->v[k];
    }
  }
  std::vector<std::string> missing, unexpected, mismatched;
  std::map<std::string, const CheckpointEntry*> found;
  for (const CheckpointEntry& e : c.entries) {
    if (!opt && e.name.rfind("optim.", 0) == 0) continue;
    auto it = targets.find(e.name);
    if (it == targets.end()) {
      unexpected.push_back(e.name);
    } else if (it->second.shape() != e.shape) {
      mismatched.push_back(e.name + " (checkpoint " + shape_str(e.shape) + ", model " +
                           shape_str(it->second.shape()) + ")");
    } else {
      found[e.name] = &e;
    }
  }
  for (const auto& [name, t] : targets)
    if (!found.count(name) && !c.find(name)) missing.push_back(name);
  if (!missing.empty() || !unexpected.empty() || !mismatched.empty()) {
    std::string msg = "checkpoint does not match the model:";
    const auto list = [&](const char* what, const std::vector<std::string>& names) {
      if (names.empty()) return;
      msg += std::string("\n  ") + what + ":";
      for (const auto& n : names) msg += "\n    " + n;
    };
    list("shape mismatch", mismatched);
    list("missing from checkpoint", missing);
    list("not in model", unexpected);
    throw CheckpointError(msg);
  }
  for (auto& [name, t] : targets) assign(t, found.at(name)->data);
  if (opt) opt->set_steps(static_cast<int64_t>(c.step));
}

}  // namespace hstmrf
