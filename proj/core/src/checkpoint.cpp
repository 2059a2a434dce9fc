// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>
#include <zlib.h>

namespace desktrain {
namespace {

using nlohmann::json;

constexpr std::array<char, 8> kMagic = {'D', 'T', 'C', 'K', 'P', 'T', '0', '1'};

constexpr std::uint32_t fourcc(const char (&s)[5]) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(s[0])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[3])) << 24;
}

constexpr std::uint32_t kMeta = fourcc("META");
constexpr std::uint32_t kParams = fourcc("PARM");
constexpr std::uint32_t kOptim = fourcc("OPTM");
constexpr std::uint32_t kLoader = fourcc("LOAD");

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  void append(const std::vector<std::uint8_t>& other) { buf_.insert(buf_.end(), other.begin(), other.end()); }

  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > data_.size() - pos_) throw CheckpointError("checkpoint: unexpected end of data");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() {
    const auto n = u32();
    const auto s = take(n);
    return std::string(s.begin(), s.end());
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::uint64_t le(int n) {
    const auto s = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(s[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

void write_tensors(Writer& w, const TensorSet& set) {
  w.u32(static_cast<std::uint32_t>(set.size()));
  for (const auto& t : set) {
    w.str(t.name);
    w.u8(t.kind == ParamKind::kNorm ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (double v : t.data) w.f64(v);
  }
}

TensorSet read_tensors(Reader& r) {
  TensorSet set;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    t.name = r.str();
    const auto kind = r.u8();
    if (kind > 1) throw CheckpointError("checkpoint: bad tensor kind");
    t.kind = kind == 1 ? ParamKind::kNorm : ParamKind::kMatrix;
    const auto ndim = r.u32();
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      t.shape.push_back(static_cast<std::size_t>(r.u64()));
      n *= t.shape.back();
    }
    if (n > (std::size_t{1} << 40)) throw CheckpointError("checkpoint: tensor too large");
    t.data.resize(n);
    for (double& v : t.data) v = r.f64();
    set.push_back(std::move(t));
  }
  return set;
}

void write_section(Writer& out, std::uint32_t tag, Writer& payload) {
  out.u32(tag);
  out.u64(payload.buffer().size());
  out.append(payload.buffer());
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointBundle& b) {
  Writer out;
  out.bytes(std::string_view(kMagic.data(), kMagic.size()));
  out.u32(kCheckpointVersion);
  out.u32(4);

  Writer meta;
  meta.u64(b.step);
  meta.bytes(json{{"tokens_seen", b.tokens_seen},
                  {"numeric_mode", std::string(bf16::to_string(b.numeric_mode))},
                  {"sr_stream_state", b.sr_stream_state}}
                 .dump());
  write_section(out, kMeta, meta);

  Writer params;
  params.u64(b.step);
  write_tensors(params, b.params);
  write_section(out, kParams, params);

  Writer optim;
  optim.u64(b.step);
  optim.u64(b.optim.t);
  write_tensors(optim, b.optim.m);
  write_tensors(optim, b.optim.v);
  write_section(out, kOptim, optim);

  Writer loader;
  loader.u64(b.step);
  json states = json::array();
  for (const auto& s : b.loaders) states.push_back(json::parse(save_state(s)));
  loader.bytes(states.dump());
  write_section(out, kLoader, loader);

  out.u32(crc32_of(out.buffer()));
  return std::move(out.buffer());
}

CheckpointBundle deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() + 12) throw CheckpointError("checkpoint: file too short");
  const auto body = bytes.first(bytes.size() - 4);
  Reader trailer(bytes.last(4));
  if (trailer.u32() != crc32_of(body)) throw CheckpointError("checkpoint: integrity checksum mismatch");

  Reader r(body);
  const auto magic = r.take(kMagic.size());
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw CheckpointError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto sections = r.u32();

  CheckpointBundle b;
  bool seen_meta = false, seen_params = false, seen_optim = false, seen_loader = false;
  bool have_step = false;
  auto check_step = [&](std::uint64_t s) {
    if (!have_step) {
      b.step = s;
      have_step = true;
    } else if (s != b.step) {
      throw CheckpointError("checkpoint: sections stamped with different steps");
    }
  };
  for (std::uint32_t i = 0; i < sections; ++i) {
    const auto tag = r.u32();
    const auto len = r.u64();
    Reader sec(r.take(static_cast<std::size_t>(len)));
    check_step(sec.u64());
    try {
      if (tag == kMeta) {
        const auto rest = sec.take(static_cast<std::size_t>(len - 8));
        const auto j = json::parse(rest.begin(), rest.end());
        b.tokens_seen = j.at("tokens_seen").get<std::uint64_t>();
        b.numeric_mode = bf16::parse_numeric_mode(j.at("numeric_mode").get<std::string>());
        b.sr_stream_state = j.at("sr_stream_state").get<std::uint64_t>();
        seen_meta = true;
      } else if (tag == kParams) {
        b.params = read_tensors(sec);
        seen_params = true;
      } else if (tag == kOptim) {
        b.optim.t = sec.u64();
        b.optim.m = read_tensors(sec);
        b.optim.v = read_tensors(sec);
        seen_optim = true;
      } else if (tag == kLoader) {
        const auto rest = sec.take(static_cast<std::size_t>(len - 8));
        const auto j = json::parse(rest.begin(), rest.end());
        for (const auto& s : j) b.loaders.push_back(restore_state(s.dump()));
        seen_loader = true;
      } else {
        throw CheckpointError("checkpoint: unknown section tag");
      }
    } catch (const json::exception& e) {
      throw CheckpointError(std::string("checkpoint: bad section payload: ") + e.what());
    } catch (const LoaderStateError& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
    if (!sec.done()) throw CheckpointError("checkpoint: trailing bytes in section");
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes after sections");
  if (!(seen_meta && seen_params && seen_optim && seen_loader)) {
    throw CheckpointError("checkpoint: missing section");
  }
  return b;
}

void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(bundle);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace desktrain
