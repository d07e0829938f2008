#ifndef TUMORKIT_IO_HPP
#define TUMORKIT_IO_HPP

// Volume file I/O: a single-file, uncompressed NIfTI-1 subset and a raw
// format (<name>.json sidecar + <name>.bin little-endian payload).
//
// Axis mapping: NIfTI dim[1] is the fastest axis, so dim[1..3] map to
// (width, height, depth) and pixdim[1..3] likewise. qform/sform are read
// past but never applied.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "tumorkit/errors.hpp"
#include "tumorkit/volume.hpp"

namespace tumorkit {

enum class FileFormat { nifti, raw };

namespace nifti {

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::int32_t kMinVoxOffset = 352;

enum Datatype : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kFloat32 = 16,
};

inline int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
  case kUInt8:
    return 1;
  case kInt16:
    return 2;
  case kFloat32:
    return 4;
  default:
    return 0;
  }
}

} // namespace nifti

namespace detail {

namespace fs = std::filesystem;

inline std::vector<char> read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (in.bad())
    throw IoError("read failed: " + path.string());
  return bytes;
}

inline void write_file(const fs::path &path, const std::vector<char> &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("write failed: " + path.string());
}

template <typename T> T byteswap(T v) {
  std::array<char, sizeof(T)> b;
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

/// Reads scalars from a byte buffer, swapping when the file's byte order
/// differs from the host's.
class ByteReader {
public:
  ByteReader(const std::vector<char> &bytes, bool file_little_endian)
      : bytes_(bytes),
        swap_((std::endian::native == std::endian::little) !=
              file_little_endian) {}

  template <typename T> T get(std::size_t offset) const {
    if (offset + sizeof(T) > bytes_.size())
      throw FormatError("truncated file");
    T v;
    std::memcpy(&v, bytes_.data() + offset, sizeof(T));
    return swap_ ? byteswap(v) : v;
  }

private:
  const std::vector<char> &bytes_;
  bool swap_;
};

/// Appends little-endian scalars.
class ByteWriter {
public:
  explicit ByteWriter(std::size_t reserve = 0) { bytes_.reserve(reserve); }

  template <typename T> void put(std::size_t offset, T v) {
    if constexpr (std::endian::native == std::endian::big)
      v = byteswap(v);
    if (bytes_.size() < offset + sizeof(T))
      bytes_.resize(offset + sizeof(T), 0);
    std::memcpy(bytes_.data() + offset, &v, sizeof(T));
  }

  template <typename T> void append(T v) { put(bytes_.size(), v); }

  void resize(std::size_t n) { bytes_.resize(n, 0); }
  std::vector<char> take() { return std::move(bytes_); }

private:
  std::vector<char> bytes_;
};

/// Decoded payload before conversion to a typed grid.
struct Payload {
  Dims dims;
  Spacing spacing;
  std::size_t channels = 1;
  std::int16_t datatype = 0;
  std::vector<double> values;
};

inline void decode_values(const ByteReader &reader, std::size_t offset,
                          std::int16_t datatype, std::size_t count,
                          std::vector<double> &out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (datatype) {
    case nifti::kUInt8:
      out[i] = reader.get<std::uint8_t>(offset + i);
      break;
    case nifti::kInt16:
      out[i] = reader.get<std::int16_t>(offset + 2 * i);
      break;
    case nifti::kFloat32:
      out[i] = reader.get<float>(offset + 4 * i);
      break;
    default:
      throw UnsupportedError("unsupported datatype " +
                             std::to_string(datatype));
    }
  }
}

inline void require_finite(const std::vector<double> &values) {
  for (double v : values)
    if (!std::isfinite(v))
      throw FormatError("payload contains NaN or Inf");
}

inline Payload read_nifti(const fs::path &path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0x1f &&
      static_cast<unsigned char>(bytes[1]) == 0x8b)
    throw UnsupportedError("gzip-compressed NIfTI is not supported: " +
                           path.string());
  if (bytes.size() < static_cast<std::size_t>(nifti::kHeaderSize))
    throw FormatError("file shorter than a NIfTI-1 header: " + path.string());

  bool little = true;
  {
    ByteReader probe(bytes, true);
    if (probe.get<std::int32_t>(0) != nifti::kHeaderSize) {
      ByteReader swapped(bytes, false);
      if (swapped.get<std::int32_t>(0) != nifti::kHeaderSize)
        throw FormatError("sizeof_hdr is not 348: " + path.string());
      little = false;
    }
  }
  const ByteReader r(bytes, little);

  const char *magic = bytes.data() + 344;
  if (std::memcmp(magic, "ni1\0", 4) == 0)
    throw UnsupportedError("two-file NIfTI (.hdr/.img) is not supported: " +
                           path.string());
  if (std::memcmp(magic, "n+1\0", 4) != 0)
    throw FormatError("bad NIfTI magic: " + path.string());

  const auto ndim = r.get<std::int16_t>(40);
  if (ndim < 3 || ndim > 7)
    throw FormatError("dim[0] must be in [3,7], got " + std::to_string(ndim));
  std::array<std::int64_t, 8> dim{};
  for (int i = 1; i <= ndim; ++i) {
    dim[i] = r.get<std::int16_t>(40 + 2 * i);
    if (dim[i] <= 0)
      throw FormatError("non-positive dim[" + std::to_string(i) + "]");
  }
  std::size_t channels = 1;
  if (ndim >= 4)
    channels = static_cast<std::size_t>(dim[4]);
  for (int i = 5; i <= ndim; ++i)
    if (dim[i] != 1)
      throw UnsupportedError("dimensions beyond the fourth must be 1");

  const auto datatype = r.get<std::int16_t>(70);
  const int bpv = nifti::bytes_per_voxel(datatype);
  if (bpv == 0)
    throw UnsupportedError("unsupported NIfTI datatype " +
                           std::to_string(datatype));
  if (r.get<std::int16_t>(72) != 8 * bpv)
    throw FormatError("bitpix inconsistent with datatype");

  Payload p;
  p.datatype = datatype;
  p.channels = channels;
  p.dims = {static_cast<std::size_t>(dim[3]), static_cast<std::size_t>(dim[2]),
            static_cast<std::size_t>(dim[1])};
  p.spacing = {std::fabs(r.get<float>(76 + 4 * 3)),
               std::fabs(r.get<float>(76 + 4 * 2)),
               std::fabs(r.get<float>(76 + 4 * 1))};
  for (double s : {p.spacing.depth, p.spacing.height, p.spacing.width})
    if (!(s > 0.0) || !std::isfinite(s))
      throw FormatError("pixdim[1..3] must be positive");

  const float vox_offset_f = r.get<float>(108);
  if (!(vox_offset_f >= nifti::kMinVoxOffset) ||
      vox_offset_f != std::floor(vox_offset_f))
    throw FormatError("vox_offset must be an integer >= 352");
  const auto vox_offset = static_cast<std::size_t>(vox_offset_f);

  const std::size_t count = p.dims.voxels() * channels;
  const std::size_t need = count * static_cast<std::size_t>(bpv);
  if (bytes.size() < vox_offset || bytes.size() - vox_offset != need)
    throw FormatError("payload size does not match dims: expected " +
                      std::to_string(need) + " bytes after offset " +
                      std::to_string(vox_offset));

  decode_values(r, vox_offset, datatype, count, p.values);

  const float slope = r.get<float>(112);
  const float inter = r.get<float>(116);
  if (datatype != nifti::kFloat32 && slope != 0.0f && std::isfinite(slope) &&
      std::isfinite(inter) && !(slope == 1.0f && inter == 0.0f))
    for (auto &v : p.values)
      v = static_cast<double>(static_cast<float>(v * slope + inter));

  require_finite(p.values);
  return p;
}

inline std::vector<char> encode_nifti_header(const Dims &dims,
                                             const Spacing &spacing,
                                             std::size_t channels,
                                             std::int16_t datatype) {
  ByteWriter w(nifti::kMinVoxOffset);
  w.resize(nifti::kMinVoxOffset);
  w.put<std::int32_t>(0, nifti::kHeaderSize);
  w.put<char>(38, 'r'); // regular
  const std::int16_t ndim = channels > 1 ? 4 : 3;
  const std::array<std::size_t, 4> extents = {dims.width, dims.height,
                                              dims.depth, channels};
  w.put<std::int16_t>(40, ndim);
  for (int i = 0; i < 7; ++i) {
    std::size_t e = i < ndim ? extents[i] : 1;
    if (e > 32767)
      throw ShapeError("dimension exceeds NIfTI-1 limit of 32767");
    w.put<std::int16_t>(42 + 2 * i, static_cast<std::int16_t>(e));
  }
  w.put<std::int16_t>(70, datatype);
  w.put<std::int16_t>(72,
                      static_cast<std::int16_t>(8 * nifti::bytes_per_voxel(datatype)));
  w.put<float>(76, 1.0f); // qfac
  w.put<float>(80, static_cast<float>(spacing.width));
  w.put<float>(84, static_cast<float>(spacing.height));
  w.put<float>(88, static_cast<float>(spacing.depth));
  for (int i = 4; i < 8; ++i)
    w.put<float>(76 + 4 * i, 1.0f);
  w.put<float>(108, static_cast<float>(nifti::kMinVoxOffset));
  w.put<float>(112, 0.0f); // scl_slope: no scaling
  w.put<float>(116, 0.0f);
  w.put<char>(123, 2); // xyzt_units: mm
  const char descrip[] = "tumorkit";
  for (std::size_t i = 0; i + 1 < sizeof(descrip); ++i)
    w.put<char>(148 + i, descrip[i]);
  w.put<char>(344, 'n');
  w.put<char>(345, '+');
  w.put<char>(346, '1');
  w.put<char>(347, '\0');
  return w.take();
}

template <typename T> constexpr std::int16_t datatype_of() {
  if constexpr (std::is_same_v<T, float>)
    return nifti::kFloat32;
  else if constexpr (std::is_same_v<T, std::int16_t>)
    return nifti::kInt16;
  else
    return nifti::kUInt8;
}

template <typename T>
void write_nifti(const fs::path &path, const Dims &dims,
                 const Spacing &spacing, std::size_t channels,
                 std::span<const T> values) {
  const auto header =
      encode_nifti_header(dims, spacing, channels, datatype_of<T>());
  std::vector<char> out;
  out.reserve(header.size() + values.size() * sizeof(T));
  out.insert(out.end(), header.begin(), header.end());
  for (T v : values) {
    if constexpr (std::endian::native == std::endian::big)
      v = byteswap(v);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
  }
  write_file(path, out);
}

inline fs::path raw_base(const fs::path &path) {
  auto ext = path.extension();
  if (ext == ".json" || ext == ".bin") {
    auto base = path;
    base.replace_extension();
    return base;
  }
  return path;
}

inline fs::path with_suffix(const fs::path &base, const char *suffix) {
  return fs::path(base.string() + suffix);
}

inline const char *raw_dtype_name(std::int16_t datatype) {
  switch (datatype) {
  case nifti::kUInt8:
    return "u8";
  case nifti::kInt16:
    return "i16";
  default:
    return "f32";
  }
}

inline Payload read_raw(const fs::path &path) {
  const auto base = raw_base(path);
  const auto sidecar_bytes = read_file(with_suffix(base, ".json"));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(sidecar_bytes.begin(), sidecar_bytes.end());
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("raw sidecar is not valid JSON: " + std::string(e.what()));
  }
  Payload p;
  try {
    const auto &d = meta.at("dims");
    const auto &s = meta.at("spacing");
    if (!d.is_array() || d.size() != 3 || !s.is_array() || s.size() != 3)
      throw FormatError("raw sidecar dims/spacing must be arrays of 3");
    for (const auto &v : d)
      if (!v.is_number_integer() || v.get<std::int64_t>() <= 0)
        throw FormatError("raw sidecar dims must be positive integers");
    p.dims = {d[0].get<std::size_t>(), d[1].get<std::size_t>(),
              d[2].get<std::size_t>()};
    p.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    const auto dtype = meta.at("dtype").get<std::string>();
    if (dtype == "u8")
      p.datatype = nifti::kUInt8;
    else if (dtype == "i16")
      p.datatype = nifti::kInt16;
    else if (dtype == "f32")
      p.datatype = nifti::kFloat32;
    else
      throw UnsupportedError("unsupported raw dtype '" + dtype + "'");
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("raw sidecar: " + std::string(e.what()));
  }
  for (double s : {p.spacing.depth, p.spacing.height, p.spacing.width})
    if (!(s > 0.0) || !std::isfinite(s))
      throw FormatError("raw sidecar spacing must be positive");

  const auto bytes = read_file(with_suffix(base, ".bin"));
  const std::size_t need =
      p.dims.voxels() * static_cast<std::size_t>(nifti::bytes_per_voxel(p.datatype));
  if (bytes.size() != need)
    throw FormatError("raw payload is " + std::to_string(bytes.size()) +
                      " bytes, dims need " + std::to_string(need));
  decode_values(ByteReader(bytes, true), 0, p.datatype, p.dims.voxels(),
                p.values);
  require_finite(p.values);
  return p;
}

template <typename T>
void write_raw(const fs::path &path, const Dims &dims, const Spacing &spacing,
               std::span<const T> values) {
  const auto base = raw_base(path);
  nlohmann::json meta = {
      {"dims", {dims.depth, dims.height, dims.width}},
      {"spacing", {spacing.depth, spacing.height, spacing.width}},
      {"dtype", raw_dtype_name(datatype_of<T>())},
  };
  const auto text = meta.dump(2) + "\n";
  write_file(with_suffix(base, ".json"),
             std::vector<char>(text.begin(), text.end()));
  ByteWriter w(values.size() * sizeof(T));
  for (T v : values)
    w.append(v);
  write_file(with_suffix(base, ".bin"), w.take());
}

inline Payload read_any(const fs::path &path, FileFormat fmt) {
  return fmt == FileFormat::nifti ? read_nifti(path) : read_raw(path);
}

inline void require_single_channel(const Payload &p) {
  if (p.channels != 1)
    throw FormatError("expected a 3D volume, file has " +
                      std::to_string(p.channels) + " channels");
}

inline std::vector<std::uint8_t> to_bytes(const std::vector<double> &values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (v < 0.0 || v > 255.0 || v != std::floor(v))
      throw FormatError("label value " + std::to_string(v) +
                        " is not an integer in [0,255]");
    out[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

template <typename T, typename Tag>
void save_grid(const Grid<T, Tag> &g, const fs::path &path, FileFormat fmt) {
  if (fmt == FileFormat::nifti)
    write_nifti<T>(path, g.dims(), g.spacing(), 1, g.data());
  else
    write_raw<T>(path, g.dims(), g.spacing(), g.data());
}

} // namespace detail

/// ".nii" selects NIfTI; ".json", ".bin" or no extension select raw.
inline FileFormat infer_format(const std::filesystem::path &path) {
  const auto name = path.filename().string();
  auto ends_with = [&](const char *suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() &&
           name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".nii.gz"))
    throw UnsupportedError("gzip-compressed NIfTI is not supported: " +
                           path.string());
  if (ends_with(".nii"))
    return FileFormat::nifti;
  return FileFormat::raw;
}

inline Volume3 load_volume(const std::filesystem::path &path, FileFormat fmt) {
  auto p = detail::read_any(path, fmt);
  detail::require_single_channel(p);
  std::vector<float> data(p.values.begin(), p.values.end());
  return Volume3(p.dims, p.spacing, std::move(data));
}

/// Loads integer-valued data as labels. Values must be integers in [0,255];
/// membership in {0,1,2,3} is checked by validate_label_volume.
inline LabelVolume load_labels(const std::filesystem::path &path,
                               FileFormat fmt) {
  auto p = detail::read_any(path, fmt);
  detail::require_single_channel(p);
  return LabelVolume(p.dims, p.spacing, detail::to_bytes(p.values));
}

/// Any nonzero voxel is true.
inline BinaryMask load_mask(const std::filesystem::path &path,
                            FileFormat fmt) {
  auto p = detail::read_any(path, fmt);
  detail::require_single_channel(p);
  std::vector<std::uint8_t> data(p.values.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = p.values[i] != 0.0 ? 1 : 0;
  return BinaryMask(p.dims, p.spacing, std::move(data));
}

inline void save_volume(const Volume3 &v, const std::filesystem::path &path,
                        FileFormat fmt) {
  detail::save_grid(v, path, fmt);
}
inline void save_volume(const LabelVolume &v,
                        const std::filesystem::path &path, FileFormat fmt) {
  detail::save_grid(v, path, fmt);
}
inline void save_volume(const BinaryMask &v, const std::filesystem::path &path,
                        FileFormat fmt) {
  detail::save_grid(v, path, fmt);
}

/// Probability stacks are 4D float32 NIfTI files with dim[4] = 3, channel
/// order WT, TC, ET.
inline ProbabilityStack load_stack(const std::filesystem::path &path) {
  auto p = detail::read_nifti(path);
  if (p.channels != 3)
    throw FormatError("probability stack needs dim[4] = 3, got " +
                      std::to_string(p.channels));
  const std::size_t n = p.dims.voxels();
  auto channel = [&](std::size_t c) {
    std::vector<float> data(p.values.begin() + static_cast<std::ptrdiff_t>(c * n),
                            p.values.begin() + static_cast<std::ptrdiff_t>((c + 1) * n));
    return Volume3(p.dims, p.spacing, std::move(data));
  };
  return ProbabilityStack(channel(0), channel(1), channel(2));
}

inline void save_stack(const ProbabilityStack &s,
                       const std::filesystem::path &path) {
  std::vector<float> all;
  all.reserve(3 * s.dims().voxels());
  for (const Volume3 *ch : {&s.wt(), &s.tc(), &s.et()})
    all.insert(all.end(), ch->data().begin(), ch->data().end());
  detail::write_nifti<float>(path, s.dims(), s.spacing(), 3, all);
}

} // namespace tumorkit

#endif // TUMORKIT_IO_HPP
