#include "efs/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace efs {

namespace {

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError("truncated file: " + path.string());
  return value;
}

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  return path.parent_path() / (path.filename().string() + ".tmp");
}

void commit(const std::filesystem::path& tmp, const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("rename failed for " + path.string() + ": " + ec.message());
  }
}

}  // namespace

NdArray from_image(const Image& img) {
  NdArray out({img.height, img.width});
  for (size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i];
  return out;
}

Image to_image(const NdArray& arr) {
  if (arr.shape.size() != 2) {
    throw IoError("to_image: expected rank-2 array, got shape " + shape_to_string(arr.shape));
  }
  Image img(arr.shape[0], arr.shape[1]);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(arr.data[i]);
  return img;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void write_ten1(const std::filesystem::path& path, const NdArray& array) {
  const auto tmp = temp_sibling(path);
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + tmp.string());
    os.write("TEN1", 4);
    put<uint32_t>(os, static_cast<uint32_t>(array.shape.size()));
    for (int d : array.shape) {
      if (d < 0) throw IoError("write_ten1: negative dimension");
      put<uint32_t>(os, static_cast<uint32_t>(d));
    }
    for (double v : array.data) put<float>(os, static_cast<float>(v));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  commit(tmp, path);
}

NdArray read_ten1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TEN1", 4) != 0) {
    throw IoError("bad TEN1 magic in " + path.string());
  }
  const auto ndim = get<uint32_t>(is, path);
  if (ndim > 8) throw IoError("TEN1 rank too large in " + path.string());
  NdArray out;
  out.shape.resize(ndim);
  int64_t numel = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    out.shape[i] = static_cast<int>(get<uint32_t>(is, path));
    numel *= out.shape[i];
  }
  out.data.resize(static_cast<size_t>(numel));
  for (int64_t i = 0; i < numel; ++i) out.data[i] = get<float>(is, path);
  return out;
}

void write_efs1(const std::filesystem::path& path, const EventStream& stream) {
  const auto tmp = temp_sibling(path);
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + tmp.string());
    os.write("EFS1", 4);
    put<uint32_t>(os, static_cast<uint32_t>(stream.width));
    put<uint32_t>(os, static_cast<uint32_t>(stream.height));
    put<uint64_t>(os, stream.events.size());
    put<double>(os, stream.sweep.t_start_s);
    put<double>(os, stream.sweep.duration_s);
    put<double>(os, stream.sweep.d_f_start_m);
    put<double>(os, stream.sweep.d_f_end_m);
    for (const Event& e : stream.events) {
      put<double>(os, e.t_s);
      put<uint16_t>(os, e.x);
      put<uint16_t>(os, e.y);
      put<int8_t>(os, e.polarity);
      put<int8_t>(os, 0);
    }
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  commit(tmp, path);
}

EventStream read_efs1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EFS1", 4) != 0) {
    throw IoError("bad EFS1 magic in " + path.string());
  }
  EventStream stream;
  stream.width = static_cast<int>(get<uint32_t>(is, path));
  stream.height = static_cast<int>(get<uint32_t>(is, path));
  const uint64_t count = get<uint64_t>(is, path);
  stream.sweep.t_start_s = get<double>(is, path);
  stream.sweep.duration_s = get<double>(is, path);
  stream.sweep.d_f_start_m = get<double>(is, path);
  stream.sweep.d_f_end_m = get<double>(is, path);
  stream.sweep.num_samples = 2;  // the file stores only the span of the linear map
  stream.events.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    Event& e = stream.events[i];
    e.t_s = get<double>(is, path);
    e.x = get<uint16_t>(is, path);
    e.y = get<uint16_t>(is, path);
    e.polarity = get<int8_t>(is, path);
    (void)get<int8_t>(is, path);
  }
  return stream;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = temp_sibling(path);
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + tmp.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  commit(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace {
std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace

bool FlatKv::has(const std::string& key) const { return find(key) != nullptr; }

const std::string* FlatKv::find(const std::string& key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return &v;
  }
  return nullptr;
}

void FlatKv::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries.emplace_back(key, value);
}

void FlatKv::set_double(const std::string& key, double value) {
  std::ostringstream os;
  os.precision(17);
  os << value;
  set(key, os.str());
}

void FlatKv::set_int(const std::string& key, int64_t value) { set(key, std::to_string(value)); }

void FlatKv::set_bool(const std::string& key, bool value) { set(key, value ? "true" : "false"); }

std::string FlatKv::get_string(const std::string& key) const {
  const std::string* v = find(key);
  if (!v) throw IoError("missing key: " + key);
  return *v;
}

double FlatKv::get_double(const std::string& key) const {
  const std::string raw = get_string(key);
  size_t pos = 0;
  double value;
  try {
    value = std::stod(raw, &pos);
  } catch (const std::exception&) {
    throw IoError("key " + key + " is not a number: '" + raw + "'");
  }
  if (pos != raw.size()) throw IoError("key " + key + " is not a number: '" + raw + "'");
  return value;
}

int64_t FlatKv::get_int(const std::string& key) const {
  const std::string raw = get_string(key);
  size_t pos = 0;
  long long value;
  try {
    value = std::stoll(raw, &pos);
  } catch (const std::exception&) {
    throw IoError("key " + key + " is not an integer: '" + raw + "'");
  }
  if (pos != raw.size()) throw IoError("key " + key + " is not an integer: '" + raw + "'");
  return value;
}

bool FlatKv::get_bool(const std::string& key) const {
  const std::string raw = get_string(key);
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw IoError("key " + key + " is not a boolean: '" + raw + "'");
}

std::string FlatKv::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
  return os.str();
}

FlatKv FlatKv::parse(const std::string& text) {
  FlatKv kv;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw IoError("line " + std::to_string(line_no) + ": expected 'key = value', got '" +
                    trimmed + "'");
    }
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    if (key.empty()) throw IoError("line " + std::to_string(line_no) + ": empty key");
    kv.entries.emplace_back(key, value);
  }
  return kv;
}

}  // namespace efs
