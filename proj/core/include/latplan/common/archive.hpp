#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace latplan {

/// Single-file container of named numeric arrays plus a JSON metadata block.
///
/// Layout (little-endian):
///   bytes 0..7   magic "LPARCH01"
///   u64          header length N
///   N bytes      JSON header {"format", "version", "meta", "arrays": [...]}
///   ...          raw array payloads at the offsets listed in the header
///
/// Each array entry records name, dtype ("f64" or "i64"), shape and byte
/// offset relative to the start of the payload section. Doubles are stored
/// bit-exactly, so save/load round trips are lossless.
class Archive {
 public:
  struct F64Array {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
  };
  struct I64Array {
    std::vector<std::int64_t> shape;
    std::vector<std::int64_t> data;
  };

  Archive() = default;
  Archive(std::string format, int version) : format_(std::move(format)), version_(version) {}

  const std::string& format() const noexcept { return format_; }
  int version() const noexcept { return version_; }

  nlohmann::json& meta() noexcept { return meta_; }
  const nlohmann::json& meta() const noexcept { return meta_; }

  void put(const std::string& name, std::vector<std::int64_t> shape, std::vector<double> data);
  void put_ints(const std::string& name, std::vector<std::int64_t> shape,
                std::vector<std::int64_t> data);

  bool has(const std::string& name) const;
  const F64Array& get(const std::string& name) const;
  const I64Array& get_ints(const std::string& name) const;

  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;

  /// Loads and checks the format tag. Throws ConfigError on mismatch,
  /// truncation, or an unsupported version (> max_version).
  static Archive load(const std::filesystem::path& path, const std::string& expected_format,
                      int max_version);

 private:
  std::string format_;
  int version_ = 1;
  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, F64Array> f64_;
  std::map<std::string, I64Array> i64_;
};

}  // namespace latplan
