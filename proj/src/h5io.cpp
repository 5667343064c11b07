#include "fluxcast/h5io.hpp"

#include <hdf5.h>

#include <cstring>

namespace fluxcast::h5 {

namespace {

// Library error spew goes through our exceptions instead.
struct QuietInit {
  QuietInit() { H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr); }
};
const QuietInit quiet_init;

void check_name(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos)
    throw DataError("invalid dataset name '" + name + "'");
}

struct Plist {
  hid_t id;
  explicit Plist(hid_t cls) : id(H5Pcreate(cls)) {}
  ~Plist() {
    if (id >= 0) H5Pclose(id);
  }
};

}  // namespace

File File::create(const std::string& path) {
  Plist fcpl(H5P_FILE_CREATE);
  H5Pset_obj_track_times(fcpl.id, false);
  hid_t id = H5Fcreate(path.c_str(), H5F_ACC_TRUNC, fcpl.id, H5P_DEFAULT);
  if (id < 0) throw DataError("cannot create file '" + path + "'");
  return File(id, path);
}

File File::open_ro(const std::string& path) {
  hid_t id = H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
  if (id < 0) throw IngestError("cannot open '" + path + "' as an array container");
  return File(id, path);
}

File& File::operator=(File&& o) noexcept {
  if (this != &o) {
    if (id_ >= 0) H5Fclose(static_cast<hid_t>(id_));
    id_ = o.id_;
    path_ = std::move(o.path_);
    o.id_ = -1;
  }
  return *this;
}

File::~File() {
  if (id_ >= 0) H5Fclose(static_cast<hid_t>(id_));
}

void write_array(File& f, const std::string& name, const Tensor& t) {
  check_name(name);
  std::vector<hsize_t> dims;
  for (int d : t.shape()) dims.push_back(static_cast<hsize_t>(d));
  if (dims.empty()) dims.push_back(1);
  hid_t space = H5Screate_simple(static_cast<int>(dims.size()), dims.data(), nullptr);
  Plist dcpl(H5P_DATASET_CREATE);
  H5Pset_obj_track_times(dcpl.id, false);
  hid_t ds = H5Dcreate2(f.id(), name.c_str(), H5T_IEEE_F64LE, space, H5P_DEFAULT, dcpl.id,
                        H5P_DEFAULT);
  if (ds < 0) {
    H5Sclose(space);
    throw DataError("cannot create dataset '" + name + "' in " + f.path());
  }
  herr_t st = H5Dwrite(ds, H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, t.data());
  H5Dclose(ds);
  H5Sclose(space);
  if (st < 0) throw DataError("write failed for dataset '" + name + "'");
}

static Tensor read_array_impl(File& f, const std::string& path) {
  hid_t ds = H5Dopen2(f.id(), path.c_str(), H5P_DEFAULT);
  if (ds < 0) throw IngestError("missing dataset '" + path + "' in " + f.path());
  hid_t space = H5Dget_space(ds);
  int rank = H5Sget_simple_extent_ndims(space);
  std::vector<hsize_t> dims(static_cast<size_t>(rank > 0 ? rank : 0));
  H5Sget_simple_extent_dims(space, dims.data(), nullptr);
  std::vector<int> shape;
  for (hsize_t d : dims) shape.push_back(static_cast<int>(d));
  if (shape.empty()) shape.push_back(1);
  Tensor t(shape);
  herr_t st = H5Dread(ds, H5T_NATIVE_DOUBLE, H5S_ALL, H5S_ALL, H5P_DEFAULT, t.data());
  H5Sclose(space);
  H5Dclose(ds);
  if (st < 0) throw IngestError("read failed for dataset '" + path + "' in " + f.path());
  return t;
}

Tensor read_array(File& f, const std::string& name) {
  check_name(name);
  return read_array_impl(f, name);
}

Tensor read_array_path(File& f, const std::string& path) { return read_array_impl(f, path); }

bool has_dataset(File& f, const std::string& path) {
  // Walk intermediate groups so missing parents do not error.
  std::string sofar;
  size_t start = 0;
  while (start < path.size()) {
    size_t slash = path.find('/', start);
    std::string part = path.substr(start, slash == std::string::npos ? slash : slash - start);
    if (!part.empty()) {
      sofar += sofar.empty() ? part : "/" + part;
      if (H5Lexists(f.id(), sofar.c_str(), H5P_DEFAULT) <= 0) return false;
    }
    if (slash == std::string::npos) break;
    start = slash + 1;
  }
  H5O_info_t info;
#if H5_VERSION_GE(1, 12, 0)
  if (H5Oget_info_by_name3(f.id(), path.c_str(), &info, H5O_INFO_BASIC, H5P_DEFAULT) < 0)
    return false;
#else
  if (H5Oget_info_by_name2(f.id(), path.c_str(), &info, H5O_INFO_BASIC, H5P_DEFAULT) < 0)
    return false;
#endif
  return info.type == H5O_TYPE_DATASET;
}

std::vector<std::string> list_datasets(File& f) {
  std::vector<std::string> names;
  auto cb = [](hid_t, const char* name, const H5L_info_t*, void* op) -> herr_t {
    static_cast<std::vector<std::string>*>(op)->push_back(name);
    return 0;
  };
#if H5_VERSION_GE(1, 12, 0)
  H5Literate2(f.id(), H5_INDEX_NAME, H5_ITER_INC, nullptr, cb, &names);
#else
  H5Literate(f.id(), H5_INDEX_NAME, H5_ITER_INC, nullptr, cb, &names);
#endif
  std::vector<std::string> out;
  for (auto& n : names)
    if (has_dataset(f, n)) out.push_back(n);
  return out;
}

std::vector<long> dataset_dims(File& f, const std::string& path) {
  hid_t ds = H5Dopen2(f.id(), path.c_str(), H5P_DEFAULT);
  if (ds < 0) throw IngestError("missing dataset '" + path + "' in " + f.path());
  hid_t space = H5Dget_space(ds);
  int rank = H5Sget_simple_extent_ndims(space);
  std::vector<hsize_t> dims(static_cast<size_t>(rank > 0 ? rank : 0));
  H5Sget_simple_extent_dims(space, dims.data(), nullptr);
  H5Sclose(space);
  H5Dclose(ds);
  std::vector<long> out;
  for (hsize_t d : dims) out.push_back(static_cast<long>(d));
  return out;
}

// ============================================================================
// Attributes
// ============================================================================

static void write_attr_impl(hid_t loc, const std::string& name, hid_t type, const void* data) {
  if (H5Aexists(loc, name.c_str()) > 0) H5Adelete(loc, name.c_str());
  hid_t space = H5Screate(H5S_SCALAR);
  hid_t attr = H5Acreate2(loc, name.c_str(), type, space, H5P_DEFAULT, H5P_DEFAULT);
  herr_t st = attr < 0 ? -1 : H5Awrite(attr, type, data);
  if (attr >= 0) H5Aclose(attr);
  H5Sclose(space);
  if (st < 0) throw DataError("cannot write attribute '" + name + "'");
}

void write_attr(File& f, const std::string& name, const std::string& value) {
  hid_t type = H5Tcopy(H5T_C_S1);
  H5Tset_size(type, value.empty() ? 1 : value.size());
  H5Tset_strpad(type, H5T_STR_NULLPAD);
  write_attr_impl(f.id(), name, type, value.empty() ? "\0" : value.data());
  H5Tclose(type);
}

void write_attr(File& f, const std::string& name, uint64_t value) {
  write_attr_impl(f.id(), name, H5T_NATIVE_UINT64, &value);
}

void write_attr(File& f, const std::string& name, double value) {
  write_attr_impl(f.id(), name, H5T_NATIVE_DOUBLE, &value);
}

bool has_attr(File& f, const std::string& name) {
  return H5Aexists(f.id(), name.c_str()) > 0;
}

static std::string read_attr_string_at(hid_t loc, const std::string& name,
                                       const std::string& where) {
  hid_t attr = H5Aopen(loc, name.c_str(), H5P_DEFAULT);
  if (attr < 0) throw IngestError("missing attribute '" + name + "' in " + where);
  hid_t type = H5Aget_type(attr);
  std::string out;
  if (H5Tis_variable_str(type) > 0) {
    char* p = nullptr;
    hid_t mem = H5Tcopy(H5T_C_S1);
    H5Tset_size(mem, H5T_VARIABLE);
    if (H5Aread(attr, mem, &p) >= 0 && p) {
      out = p;
      hid_t space = H5Aget_space(attr);
      H5Dvlen_reclaim(mem, space, H5P_DEFAULT, &p);
      H5Sclose(space);
    }
    H5Tclose(mem);
  } else {
    size_t n = H5Tget_size(type);
    std::vector<char> buf(n + 1, '\0');
    hid_t mem = H5Tcopy(H5T_C_S1);
    H5Tset_size(mem, n);
    // Match the padded layout; a null-terminated destination would lose the
    // final byte in conversion.
    H5Tset_strpad(mem, H5T_STR_NULLPAD);
    H5Aread(attr, mem, buf.data());
    H5Tclose(mem);
    out.assign(buf.data(), strnlen(buf.data(), n));
  }
  H5Tclose(type);
  H5Aclose(attr);
  return out;
}

std::string read_attr_string(File& f, const std::string& name) {
  return read_attr_string_at(f.id(), name, f.path());
}

uint64_t read_attr_u64(File& f, const std::string& name) {
  hid_t attr = H5Aopen(f.id(), name.c_str(), H5P_DEFAULT);
  if (attr < 0) throw IngestError("missing attribute '" + name + "' in " + f.path());
  uint64_t v = 0;
  herr_t st = H5Aread(attr, H5T_NATIVE_UINT64, &v);
  H5Aclose(attr);
  if (st < 0) throw IngestError("cannot read attribute '" + name + "'");
  return v;
}

double read_attr_f64(File& f, const std::string& name) {
  hid_t attr = H5Aopen(f.id(), name.c_str(), H5P_DEFAULT);
  if (attr < 0) throw IngestError("missing attribute '" + name + "' in " + f.path());
  double v = 0;
  herr_t st = H5Aread(attr, H5T_NATIVE_DOUBLE, &v);
  H5Aclose(attr);
  if (st < 0) throw IngestError("cannot read attribute '" + name + "'");
  return v;
}

bool dataset_attr_exists(File& f, const std::string& path, const std::string& attr) {
  hid_t ds = H5Dopen2(f.id(), path.c_str(), H5P_DEFAULT);
  if (ds < 0) return false;
  bool ok = H5Aexists(ds, attr.c_str()) > 0;
  H5Dclose(ds);
  return ok;
}

std::string read_dataset_attr_string(File& f, const std::string& path, const std::string& attr) {
  hid_t ds = H5Dopen2(f.id(), path.c_str(), H5P_DEFAULT);
  if (ds < 0) throw IngestError("missing dataset '" + path + "' in " + f.path());
  std::string out;
  try {
    out = read_attr_string_at(ds, attr, path + " in " + f.path());
  } catch (...) {
    H5Dclose(ds);
    throw;
  }
  H5Dclose(ds);
  return out;
}

}  // namespace fluxcast::h5
