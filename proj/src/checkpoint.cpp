#include "zengram/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "zengram/binary_io.hpp"

namespace zengram {

namespace {

constexpr char kMagic[] = "ZENGRAM-CKPT v1\n";

void put_array_data(ByteWriter& w, const num::Array& a) {
  for (double x : a.data()) w.put(x);
}

num::Array get_array_data(ByteReader& r, const num::Shape& shape) {
  num::Array a(shape);
  for (auto& x : a.data()) x = r.get<double>();
  return a;
}

}  // namespace

OptimState OptimState::zeros(const ParamStore& params) {
  OptimState s;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params.at(i).shape());
    s.v.emplace_back(params.at(i).shape());
  }
  return s;
}

const std::string* Checkpoint::asset(const std::string& name) const {
  for (const auto& [k, v] : assets)
    if (k == name) return &v;
  return nullptr;
}

void Checkpoint::set_asset(const std::string& name, std::string text) {
  for (auto& [k, v] : assets)
    if (k == name) {
      v = std::move(text);
      return;
    }
  assets.emplace_back(name, std::move(text));
}

Vocab Checkpoint::vocab() const {
  const auto* text = asset("vocab");
  if (!text) throw CheckpointError("checkpoint carries no vocabulary");
  std::istringstream in(*text);
  return Vocab::read(in, "checkpoint vocabulary");
}

NgramLexicon Checkpoint::lexicon() const {
  const auto* text = asset("lexicon");
  if (!text) throw CheckpointError("checkpoint carries no lexicon");
  std::istringstream in(*text);
  return NgramLexicon::read(in, "checkpoint lexicon");
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  const std::string magic(kMagic);
  w.put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(magic.data()), magic.size()));
  w.put(ckpt.step);
  w.put_string(ckpt.config.to_text());
  w.put(static_cast<std::uint32_t>(ckpt.params.size()));
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& a = ckpt.params.at(i);
    w.put_string(ckpt.params.name(i));
    w.put(static_cast<std::uint32_t>(a.shape().size()));
    for (auto d : a.shape()) w.put(static_cast<std::uint64_t>(d));
    put_array_data(w, a);
  }
  const bool has_optim = !ckpt.optim.empty();
  w.put(static_cast<std::uint8_t>(has_optim));
  if (has_optim) {
    if (ckpt.optim.m.size() != ckpt.params.size() || ckpt.optim.v.size() != ckpt.params.size())
      throw CheckpointError("optimizer state does not match the parameter table");
    w.put(ckpt.optim.step);
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      if (ckpt.optim.m[i].shape() != ckpt.params.at(i).shape() || ckpt.optim.v[i].shape() != ckpt.params.at(i).shape())
        throw CheckpointError("optimizer moment shape mismatch for " + ckpt.params.name(i));
      put_array_data(w, ckpt.optim.m[i]);
      put_array_data(w, ckpt.optim.v[i]);
    }
  }
  w.put(static_cast<std::uint32_t>(ckpt.assets.size()));
  for (const auto& [name, text] : ckpt.assets) {
    w.put_string(name);
    w.put_string(text);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  const std::string magic(kMagic);
  if (bytes.size() < magic.size() || !std::equal(magic.begin(), magic.end(), bytes.begin()))
    throw CheckpointError(source + ": not a checkpoint or unsupported version (expected ZENGRAM-CKPT v1)");
  try {
    ByteReader r(bytes.subspan(magic.size()));
    Checkpoint c;
    c.step = r.get<std::uint64_t>();
    c.config = EncoderConfig::from_text(r.get_string());
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
      auto name = r.get_string();
      const auto rank = r.get<std::uint32_t>();
      if (rank > 8) throw CheckpointError(source + ": implausible rank for " + name);
      num::Shape shape;
      std::size_t total = 1;
      for (std::uint32_t k = 0; k < rank; ++k) {
        shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        total *= shape.back();
      }
      if (total * 8 > bytes.size()) throw CheckpointError(source + ": truncated parameter " + name);
      c.params.add(name, get_array_data(r, shape));
    }
    if (r.get<std::uint8_t>()) {
      c.optim.step = r.get<std::uint64_t>();
      for (std::size_t i = 0; i < c.params.size(); ++i) {
        c.optim.m.push_back(get_array_data(r, c.params.at(i).shape()));
        c.optim.v.push_back(get_array_data(r, c.params.at(i).shape()));
      }
    }
    const auto na = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < na; ++i) {
      auto name = r.get_string();
      c.assets.emplace_back(std::move(name), r.get_string());
    }
    if (!r.at_end()) throw CheckpointError(source + ": trailing bytes after checkpoint");
    return c;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(source + ": " + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failure on checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

}  // namespace zengram
