#pragma once

#include <cstdint>
#include <filesystem>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "efs/event_stream.hpp"
#include "efs/image.hpp"

namespace efs {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// N-dimensional row-major array. Kept at double precision in memory;
/// the on-disk "TEN1" format stores f32.
struct NdArray {
  std::vector<int> shape;
  std::vector<double> data;

  NdArray() = default;
  explicit NdArray(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  int64_t numel() const { return numel_of(shape); }

  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }

  // Index helpers for the common ranks used by the encodings.
  double& at4(int a, int b, int c, int d) {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  double at4(int a, int b, int c, int d) const {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
  }
  double& at2(int y, int x) { return data[static_cast<size_t>(y) * shape[1] + x]; }
  double at2(int y, int x) const { return data[static_cast<size_t>(y) * shape[1] + x]; }
};

NdArray from_image(const Image& img);
Image to_image(const NdArray& arr);  // requires rank 2

std::string shape_to_string(const std::vector<int>& shape);

/// Tensor file format "TEN1": magic "TEN1", u32 ndim, u32 dims[ndim], then
/// f32 data in row-major order, all little-endian. Writes are atomic
/// (temp file + rename).
void write_ten1(const std::filesystem::path& path, const NdArray& array);
NdArray read_ten1(const std::filesystem::path& path);

/// Event file format "EFS1": magic "EFS1", u32 width, u32 height, u64 count,
/// f64 t_start_s, f64 duration_s, f64 d_f_start_m, f64 d_f_end_m, then count
/// records of {f64 t_s, u16 x, u16 y, i8 polarity, i8 pad}, little-endian.
void write_efs1(const std::filesystem::path& path, const EventStream& stream);
EventStream read_efs1(const std::filesystem::path& path);

/// Writes `text` to `path` atomically (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Flat "key = value" text used by configs, manifests and checkpoints.
/// '#' starts a comment; blank lines are skipped. Keys keep file order.
struct FlatKv {
  std::vector<std::pair<std::string, std::string>> entries;

  bool has(const std::string& key) const;
  const std::string* find(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);  // round-trip exact
  void set_int(const std::string& key, int64_t value);
  void set_bool(const std::string& key, bool value);

  // Typed getters; throw IoError naming the key when missing or malformed.
  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  std::string serialize() const;
  static FlatKv parse(const std::string& text);
};

}  // namespace efs
