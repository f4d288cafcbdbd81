#include "latplan/common/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "latplan/common/error.hpp"

namespace latplan {

namespace {

constexpr char kMagic[8] = {'L', 'P', 'A', 'R', 'C', 'H', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive payloads are written in native order; big-endian hosts need byte swapping");

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

void check_shape(const std::string& name, const std::vector<std::int64_t>& shape,
                 std::size_t size) {
  for (auto d : shape) {
    if (d < 0) throw ConfigError("archive array '" + name + "' has a negative dimension");
  }
  if (static_cast<std::size_t>(element_count(shape)) != size) {
    throw ConfigError("archive array '" + name + "' shape does not match its data length");
  }
}

}  // namespace

void Archive::put(const std::string& name, std::vector<std::int64_t> shape,
                  std::vector<double> data) {
  check_shape(name, shape, data.size());
  i64_.erase(name);
  f64_[name] = F64Array{std::move(shape), std::move(data)};
}

void Archive::put_ints(const std::string& name, std::vector<std::int64_t> shape,
                       std::vector<std::int64_t> data) {
  check_shape(name, shape, data.size());
  f64_.erase(name);
  i64_[name] = I64Array{std::move(shape), std::move(data)};
}

bool Archive::has(const std::string& name) const {
  return f64_.count(name) != 0 || i64_.count(name) != 0;
}

const Archive::F64Array& Archive::get(const std::string& name) const {
  auto it = f64_.find(name);
  if (it == f64_.end()) throw ConfigError("archive has no f64 array named '" + name + "'");
  return it->second;
}

const Archive::I64Array& Archive::get_ints(const std::string& name) const {
  auto it = i64_.find(name);
  if (it == i64_.end()) throw ConfigError("archive has no i64 array named '" + name + "'");
  return it->second;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : f64_) out.push_back(k);
  for (const auto& [k, _] : i64_) out.push_back(k);
  return out;
}

void Archive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format"] = format_;
  header["version"] = version_;
  header["meta"] = meta_;
  auto arrays = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, arr] : f64_) {
    arrays.push_back({{"name", name}, {"dtype", "f64"}, {"shape", arr.shape}, {"offset", offset}});
    offset += arr.data.size() * sizeof(double);
  }
  for (const auto& [name, arr] : i64_) {
    arrays.push_back({{"name", name}, {"dtype", "i64"}, {"shape", arr.shape}, {"offset", offset}});
    offset += arr.data.size() * sizeof(std::int64_t);
  }
  header["arrays"] = arrays;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, arr] : f64_) {
    out.write(reinterpret_cast<const char*>(arr.data.data()),
              static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
  }
  for (const auto& [_, arr] : i64_) {
    out.write(reinterpret_cast<const char*>(arr.data.data()),
              static_cast<std::streamsize>(arr.data.size() * sizeof(std::int64_t)));
  }
  if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

Archive Archive::load(const std::filesystem::path& path, const std::string& expected_format,
                      int max_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError("'" + path.string() + "' is not a latplan archive");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 32)) throw ConfigError("corrupt archive header in '" + path.string() + "'");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ConfigError("truncated archive header in '" + path.string() + "'");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("corrupt archive header in '" + path.string() + "': " + e.what());
  }
  Archive ar(header.at("format").get<std::string>(), header.at("version").get<int>());
  if (!expected_format.empty() && ar.format_ != expected_format) {
    throw ConfigError("'" + path.string() + "' holds a '" + ar.format_ + "' archive, expected '" +
                      expected_format + "'");
  }
  if (ar.version_ > max_version) {
    throw ConfigError("'" + path.string() + "' has unsupported version " +
                      std::to_string(ar.version_));
  }
  ar.meta_ = header.value("meta", nlohmann::json::object());

  const auto payload_start = in.tellg();
  for (const auto& entry : header.at("arrays")) {
    const auto name = entry.at("name").get<std::string>();
    const auto dtype = entry.at("dtype").get<std::string>();
    auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = static_cast<std::size_t>(element_count(shape));
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    if (dtype == "f64") {
      std::vector<double> data(count);
      in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 8));
      if (!in) throw ConfigError("truncated array '" + name + "' in '" + path.string() + "'");
      ar.put(name, std::move(shape), std::move(data));
    } else if (dtype == "i64") {
      std::vector<std::int64_t> data(count);
      in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 8));
      if (!in) throw ConfigError("truncated array '" + name + "' in '" + path.string() + "'");
      ar.put_ints(name, std::move(shape), std::move(data));
    } else {
      throw ConfigError("unknown dtype '" + dtype + "' in '" + path.string() + "'");
    }
  }
  return ar;
}

}  // namespace latplan
