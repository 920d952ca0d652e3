#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Flat key=value run manifests. Every CLI command writes one; re-running a
// command from its manifest reproduces the outputs byte-for-byte. Keys are
// kept in insertion order when writing; result.* and timing.* keys are
// informational and ignored when a manifest is replayed.

namespace lksvd {

class Manifest {
 public:
  void set(const std::string& key, const std::string& value) {
    if (map_.find(key) == map_.end()) order_.push_back(key);
    map_[key] = value;
  }
  void set(const std::string& key, double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    set(key, os.str());
  }
  void set(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }
  void set(const std::string& key, std::size_t v) { set(key, std::to_string(v)); }
  void set(const std::string& key, int v) { set(key, std::to_string(v)); }
  void set(const std::string& key, bool v) { set(key, std::string(v ? "1" : "0")); }

  bool has(const std::string& key) const { return map_.count(key) > 0; }

  const std::string& get(const std::string& key) const {
    const auto it = map_.find(key);
    if (it == map_.end())
      throw std::runtime_error("manifest: missing key '" + key + "'");
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    const auto it = map_.find(key);
    return it == map_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key) const { return std::stod(get(key)); }
  std::uint64_t get_u64(const std::string& key) const {
    return std::stoull(get(key));
  }

  void save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot write " + path);
    for (const auto& k : order_) f << k << "=" << map_.at(k) << "\n";
  }

  static Manifest load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("manifest: cannot open " + path);
    Manifest m;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("manifest: malformed line '" + line + "'");
      m.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return m;
  }

  const std::vector<std::string>& keys() const { return order_; }

 private:
  std::map<std::string, std::string> map_;
  std::vector<std::string> order_;
};

/// FNV-1a over raw bytes; used to fingerprint inputs and outputs in manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xF];
    h >>= 4;
  }
  return s;
}

}  // namespace lksvd
