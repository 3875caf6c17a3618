#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace histex::detail {

/// Parsed checkpoint container: JSON header followed by little-endian doubles.
struct TensorFile {
  nlohmann::json header;
  std::vector<double> data;

  struct Entry {
    std::string name;
    std::vector<std::ptrdiff_t> shape;
    std::size_t offset;
    std::size_t count;
  };
  std::vector<Entry> entries() const;
};

TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace histex::detail
