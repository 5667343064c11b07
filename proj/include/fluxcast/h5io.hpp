#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluxcast/tensor.hpp"

namespace fluxcast::h5 {

/// Thin RAII wrapper over an HDF5 file handle. All writers disable object
/// time tracking and use contiguous layout, so regenerating the same content
/// yields byte-identical files.
class File {
 public:
  static File create(const std::string& path);
  static File open_ro(const std::string& path);

  File() = default;
  File(File&& o) noexcept : id_(o.id_), path_(std::move(o.path_)) { o.id_ = -1; }
  File& operator=(File&& o) noexcept;
  File(const File&) = delete;
  File& operator=(const File&) = delete;
  ~File();

  long long id() const { return id_; }
  bool valid() const { return id_ >= 0; }
  const std::string& path() const { return path_; }

 private:
  File(long long id, std::string path) : id_(id), path_(std::move(path)) {}
  long long id_ = -1;
  std::string path_;
};

// Root-level double arrays. Names may contain dots but not slashes.
void write_array(File& f, const std::string& name, const Tensor& t);
Tensor read_array(File& f, const std::string& name);
bool has_dataset(File& f, const std::string& path);
std::vector<std::string> list_datasets(File& f);

// Root-group scalar attributes.
void write_attr(File& f, const std::string& name, const std::string& value);
void write_attr(File& f, const std::string& name, uint64_t value);
void write_attr(File& f, const std::string& name, double value);
bool has_attr(File& f, const std::string& name);
std::string read_attr_string(File& f, const std::string& name);
uint64_t read_attr_u64(File& f, const std::string& name);
double read_attr_f64(File& f, const std::string& name);

// Path-addressed reads for externally produced files (groups allowed).
// Numeric data of any float/int type is converted to double on read.
std::vector<long> dataset_dims(File& f, const std::string& path);
Tensor read_array_path(File& f, const std::string& path);
bool dataset_attr_exists(File& f, const std::string& path, const std::string& attr);
std::string read_dataset_attr_string(File& f, const std::string& path, const std::string& attr);

}  // namespace fluxcast::h5
