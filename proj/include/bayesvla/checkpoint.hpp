#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "bayesvla/errors.hpp"
#include "bayesvla/hash.hpp"
#include "bayesvla/nn.hpp"

namespace bayesvla {

// Self-describing binary checkpoint container: named float32 tensors plus a
// string metadata map. Every checkpoint records the attention-scaling flag
// and the hash of the config that produced it.

struct Checkpoint {
  std::map<std::string, std::string> meta;
  struct Entry {
    int rows = 0, cols = 0;
    std::vector<float> data;
  };
  std::map<std::string, Entry> tensors;

  static constexpr std::uint32_t kMagic = 0x4b435642;  // "BVCK"
  static constexpr std::uint32_t kVersion = 1;

  void set_meta(const std::string& k, const std::string& v) { meta[k] = v; }
  std::string get_meta(const std::string& k, const std::string& fallback = "") const {
    auto it = meta.find(k);
    return it == meta.end() ? fallback : it->second;
  }

  void put(const std::string& name, const nn::Tensor<float>& t) {
    tensors[name] = Entry{t.rows(), t.cols(), t.data()};
  }

  void put_params(const nn::ParamList<float>& params) {
    for (const auto& p : params) put(p.name, p.tensor);
  }

  // copy stored values into existing (already shaped) parameters
  void load_params(nn::ParamList<float>& params) const {
    for (auto& p : params) {
      auto it = tensors.find(p.name);
      if (it == tensors.end())
        throw IoError("checkpoint missing tensor: " + p.name);
      const Entry& e = it->second;
      if (e.rows != p.tensor.rows() || e.cols != p.tensor.cols())
        throw ShapeError("checkpoint tensor shape mismatch: " + p.name);
      p.tensor.data() = e.data;
    }
  }

  std::uint64_t params_hash() const {
    Hasher h;
    for (const auto& [name, e] : tensors) {
      h.update(name);
      h.update_pod(e.rows);
      h.update_pod(e.cols);
      h.update_vec(e.data);
    }
    return h.digest();
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    write_u32(f, kMagic);
    write_u32(f, kVersion);
    write_u32(f, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      write_str(f, k);
      write_str(f, v);
    }
    write_u32(f, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, e] : tensors) {
      write_str(f, name);
      write_u32(f, static_cast<std::uint32_t>(e.rows));
      write_u32(f, static_cast<std::uint32_t>(e.cols));
      f.write(reinterpret_cast<const char*>(e.data.data()),
              static_cast<std::streamsize>(e.data.size() * sizeof(float)));
    }
    if (!f) throw IoError("checkpoint write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    if (read_u32(f) != kMagic) throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(f);
    if (version != kVersion)
      throw IoError("checkpoint version " + std::to_string(version) +
                    " unsupported (expected " + std::to_string(kVersion) + ")");
    Checkpoint ck;
    const std::uint32_t nmeta = read_u32(f);
    for (std::uint32_t i = 0; i < nmeta; ++i) {
      std::string k = read_str(f);
      ck.meta[k] = read_str(f);
    }
    const std::uint32_t nt = read_u32(f);
    for (std::uint32_t i = 0; i < nt; ++i) {
      std::string name = read_str(f);
      Entry e;
      e.rows = static_cast<int>(read_u32(f));
      e.cols = static_cast<int>(read_u32(f));
      e.data.resize(static_cast<std::size_t>(e.rows) * e.cols);
      f.read(reinterpret_cast<char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(float)));
      if (!f) throw IoError("truncated checkpoint: " + path);
      ck.tensors[name] = std::move(e);
    }
    return ck;
  }

 private:
  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw IoError("truncated checkpoint header");
    return v;
  }
  static void write_str(std::ofstream& f, const std::string& s) {
    write_u32(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_str(std::ifstream& f) {
    const std::uint32_t n = read_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw IoError("truncated checkpoint string");
    return s;
  }
};

inline std::uint64_t params_hash(const nn::ParamList<float>& params) {
  Hasher h;
  for (const auto& p : params) {
    h.update(p.name);
    h.update_vec(p.tensor.data());
  }
  return h.digest();
}

}  // namespace bayesvla
