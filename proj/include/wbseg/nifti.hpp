/*
 * wbseg : weakly-supervised soft-label segmentation for whole-body DWI
 *
 * Copyright 2026 the wbseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wbseg/volume.hpp"

namespace wbseg {

enum class VolumeFormat { nifti1, raw_sidecar };

inline VolumeFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".nii" ? VolumeFormat::nifti1
                                    : VolumeFormat::raw_sidecar;
}

namespace nifti {

// NIfTI-1 header, single-file variant (magic "n+1\0", data at vox_offset).
struct Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtUint16 = 512;

inline void bswap(std::int16_t& v) { v = static_cast<std::int16_t>(__builtin_bswap16(static_cast<std::uint16_t>(v))); }
inline void bswap(std::int32_t& v) { v = static_cast<std::int32_t>(__builtin_bswap32(static_cast<std::uint32_t>(v))); }
inline void bswap(float& v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  u = __builtin_bswap32(u);
  std::memcpy(&v, &u, 4);
}

inline void bswap_header(Header& h) {
  bswap(h.sizeof_hdr);
  bswap(h.extents);
  bswap(h.session_error);
  for (auto& d : h.dim) bswap(d);
  bswap(h.intent_p1);
  bswap(h.intent_p2);
  bswap(h.intent_p3);
  bswap(h.intent_code);
  bswap(h.datatype);
  bswap(h.bitpix);
  bswap(h.slice_start);
  for (auto& p : h.pixdim) bswap(p);
  bswap(h.vox_offset);
  bswap(h.scl_slope);
  bswap(h.scl_inter);
  bswap(h.slice_end);
  bswap(h.cal_max);
  bswap(h.cal_min);
  bswap(h.slice_duration);
  bswap(h.toffset);
  bswap(h.glmax);
  bswap(h.glmin);
  bswap(h.qform_code);
  bswap(h.sform_code);
  bswap(h.quatern_b);
  bswap(h.quatern_c);
  bswap(h.quatern_d);
  bswap(h.qoffset_x);
  bswap(h.qoffset_y);
  bswap(h.qoffset_z);
  for (auto& s : h.srow_x) bswap(s);
  for (auto& s : h.srow_y) bswap(s);
  for (auto& s : h.srow_z) bswap(s);
}

inline Eigen::Matrix3d quaternion_rotation(double b, double c, double d) {
  const double sq = 1.0 - (b * b + c * c + d * d);
  const double a = sq > 0 ? std::sqrt(sq) : 0.0;
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d, 2 * b * d + 2 * a * c,
      2 * b * c + 2 * a * d, a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b,
      2 * b * d - 2 * a * c, 2 * c * d + 2 * a * b, a * a + d * d - c * c - b * b;
  return r;
}

/// Orientation precedence: sform when sform_code > 0, else qform, else
/// identity axis-aligned.
inline Grid grid_from_header(const Header& h) {
  Grid g;
  for (int a = 0; a < 3; ++a)
    g.dims[a] = h.dim[a + 1] > 0 ? h.dim[a + 1] : 1;

  double unit_scale = 1.0;  // world unit -> mm
  switch (h.xyzt_units & 0x07) {
    case 1: unit_scale = 1000.0; break;  // metres
    case 3: unit_scale = 1e-3; break;    // microns
    default: unit_scale = 1.0; break;    // mm or unspecified
  }

  if (h.sform_code > 0) {
    Eigen::Matrix3d m;
    m << h.srow_x[0], h.srow_x[1], h.srow_x[2], h.srow_y[0], h.srow_y[1],
        h.srow_y[2], h.srow_z[0], h.srow_z[1], h.srow_z[2];
    g.origin = Eigen::Vector3d(h.srow_x[3], h.srow_y[3], h.srow_z[3]);
    for (int a = 0; a < 3; ++a) {
      const double norm = m.col(a).norm();
      if (norm <= 0) throw FormatError("nifti: degenerate sform column");
      g.spacing[a] = norm;
      g.orientation.col(a) = m.col(a) / norm;
    }
  } else if (h.qform_code > 0) {
    g.orientation = quaternion_rotation(h.quatern_b, h.quatern_c, h.quatern_d);
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    g.orientation.col(2) *= qfac;
    for (int a = 0; a < 3; ++a)
      g.spacing[a] = h.pixdim[a + 1] > 0 ? h.pixdim[a + 1] : 1.0;
    g.origin = Eigen::Vector3d(h.qoffset_x, h.qoffset_y, h.qoffset_z);
  } else {
    for (int a = 0; a < 3; ++a)
      g.spacing[a] = h.pixdim[a + 1] > 0 ? h.pixdim[a + 1] : 1.0;
  }
  g.spacing *= unit_scale;
  g.origin *= unit_scale;

  // Float32 header storage leaves the direction cosines slightly off
  // orthonormal; re-orthogonalise (and reject anything genuinely skewed).
  Eigen::Matrix3d q = g.orientation;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < a; ++b) q.col(a) -= q.col(b).dot(q.col(a)) * q.col(b);
    const double norm = q.col(a).norm();
    if (norm < 1e-6) throw FormatError("nifti: degenerate orientation");
    q.col(a) /= norm;
  }
  if ((q - g.orientation).cwiseAbs().maxCoeff() > 1e-3)
    throw FormatError("nifti: orientation matrix is not orthogonal");
  g.orientation = q;
  g.validate();
  return g;
}

inline Unit unit_from_descrip(const char* descrip) {
  const std::string d(descrip, strnlen(descrip, 80));
  const std::string key = "unit=";
  const auto pos = d.find(key);
  if (pos == std::string::npos) return Unit::signal;
  auto end = d.find_first_of(" ;", pos + key.size());
  if (end == std::string::npos) end = d.size();
  try {
    return unit_from_string(d.substr(pos + key.size(), end - pos - key.size()));
  } catch (const FormatError&) {
    return Unit::signal;
  }
}

struct Contents {
  Grid grid;
  int channels = 1;
  Unit unit = Unit::signal;
  std::vector<float> data;  // channel-major: channels * voxels
};

inline Contents read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  Header h{};
  in.read(reinterpret_cast<char*>(&h), sizeof(Header));
  if (!in) throw FormatError("nifti: truncated header in '" + path.string() + "'");

  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    bswap_header(h);
    swapped = true;
    if (h.sizeof_hdr != 348)
      throw FormatError("nifti: bad header size in '" + path.string() + "'");
  }
  if (std::memcmp(h.magic, "n+1", 4) != 0) {
    if (std::memcmp(h.magic, "ni1", 4) == 0)
      throw FormatError("nifti: two-file (.hdr/.img) form is not supported");
    throw FormatError("nifti: bad magic in '" + path.string() + "'");
  }

  const int ndim = h.dim[0];
  if (ndim < 1 || ndim > 7) throw FormatError("nifti: invalid dim[0]");
  for (int d = 5; d <= 7; ++d)
    if (d <= ndim && h.dim[d] > 1)
      throw FormatError("nifti: >4-dimensional images are not supported");
  const int channels = (ndim >= 4 && h.dim[4] > 1) ? h.dim[4] : 1;

  Contents c;
  c.grid = grid_from_header(h);
  c.channels = channels;
  c.unit = unit_from_descrip(h.descrip);

  const std::int64_t n = c.grid.voxels() * channels;
  const std::streamoff offset =
      std::max<std::streamoff>(static_cast<std::streamoff>(h.vox_offset), 348);
  in.seekg(offset);

  double slope = h.scl_slope;
  const double inter = h.scl_inter;
  if (slope == 0) slope = 1;

  auto read_as = [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> raw(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(n * sizeof(T)));
    if (!in) throw FormatError("nifti: truncated voxel data in '" + path.string() + "'");
    if (swapped && sizeof(T) > 1) {
      for (auto& v : raw) {
        if constexpr (sizeof(T) == 2) {
          std::uint16_t u;
          std::memcpy(&u, &v, 2);
          u = __builtin_bswap16(u);
          std::memcpy(&v, &u, 2);
        } else if constexpr (sizeof(T) == 4) {
          std::uint32_t u;
          std::memcpy(&u, &v, 4);
          u = __builtin_bswap32(u);
          std::memcpy(&v, &u, 4);
        } else {
          std::uint64_t u;
          std::memcpy(&u, &v, 8);
          u = __builtin_bswap64(u);
          std::memcpy(&v, &u, 8);
        }
      }
    }
    c.data.resize(static_cast<std::size_t>(n));
    const bool plain = slope == 1 && inter == 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double v = static_cast<double>(raw[static_cast<std::size_t>(i)]);
      c.data[static_cast<std::size_t>(i)] =
          static_cast<float>(plain ? v : slope * v + inter);
    }
  };

  switch (h.datatype) {
    case kDtInt16: read_as(std::int16_t{}); break;
    case kDtUint16: read_as(std::uint16_t{}); break;
    case kDtFloat32: read_as(float{}); break;
    case kDtFloat64: read_as(double{}); break;
    default:
      throw FormatError("nifti: unsupported datatype " + std::to_string(h.datatype) +
                        " in '" + path.string() + "'");
  }
  return c;
}

inline void write_file(const std::filesystem::path& path, const Grid& grid,
                       int channels, const float* data, Unit unit,
                       const std::string& note = "") {
  static_assert(std::endian::native == std::endian::little,
                "writer assumes a little-endian host");
  grid.validate();
  Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = static_cast<std::int16_t>(channels > 1 ? 4 : 3);
  h.dim[1] = static_cast<std::int16_t>(grid.dims[0]);
  h.dim[2] = static_cast<std::int16_t>(grid.dims[1]);
  h.dim[3] = static_cast<std::int16_t>(grid.dims[2]);
  h.dim[4] = static_cast<std::int16_t>(channels > 1 ? channels : 1);
  for (int d = 5; d <= 7; ++d) h.dim[d] = 1;
  h.datatype = kDtFloat32;
  h.bitpix = 32;
  h.pixdim[0] = 1;
  for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(grid.spacing[a]);
  h.pixdim[4] = 1;
  h.vox_offset = 352;
  h.scl_slope = 1;
  h.scl_inter = 0;
  h.xyzt_units = 2;  // millimetres
  h.sform_code = 1;
  h.qform_code = 0;
  const Eigen::Matrix3d m = grid.orientation * grid.spacing.asDiagonal();
  for (int a = 0; a < 3; ++a) {
    h.srow_x[a] = static_cast<float>(m(0, a));
    h.srow_y[a] = static_cast<float>(m(1, a));
    h.srow_z[a] = static_cast<float>(m(2, a));
  }
  h.srow_x[3] = static_cast<float>(grid.origin[0]);
  h.srow_y[3] = static_cast<float>(grid.origin[1]);
  h.srow_z[3] = static_cast<float>(grid.origin[2]);
  std::string descrip = "wbseg unit=" + to_string(unit);
  if (!note.empty()) descrip += " " + note;
  std::snprintf(h.descrip, sizeof(h.descrip), "%s", descrip.c_str());
  std::memcpy(h.magic, "n+1", 4);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(&h), sizeof(Header));
  const char pad[4] = {0, 0, 0, 0};
  out.write(pad, 4);  // header extension flag: none
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(grid.voxels() * channels * sizeof(float)));
  if (!out) throw FormatError("short write to '" + path.string() + "'");
}

}  // namespace nifti

namespace rawio {

inline void write_file(const std::filesystem::path& path, const VolumeF& v,
                       const std::string& note = "") {
  v.grid.validate();
  std::ofstream raw(path, std::ios::binary);
  if (!raw) throw FormatError("cannot write '" + path.string() + "'");
  static_assert(std::endian::native == std::endian::little,
                "writer assumes a little-endian host");
  raw.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.voxels() * sizeof(float)));
  if (!raw) throw FormatError("short write to '" + path.string() + "'");

  std::ofstream meta(path.string() + ".meta");
  if (!meta) throw FormatError("cannot write '" + path.string() + ".meta'");
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return std::string(buf);
  };
  meta << "dims: " << v.grid.dims[0] << " " << v.grid.dims[1] << " "
       << v.grid.dims[2] << "\n";
  meta << "spacing:";
  for (int a = 0; a < 3; ++a) meta << " " << num(v.grid.spacing[a]);
  meta << "\norigin:";
  for (int a = 0; a < 3; ++a) meta << " " << num(v.grid.origin[a]);
  meta << "\norientation:";
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) meta << " " << num(v.grid.orientation(r, c));
  meta << "\nunit: " << to_string(v.unit) << "\n";
  if (!note.empty()) meta << "note: " << note << "\n";
}

inline VolumeF read_file(const std::filesystem::path& path) {
  std::ifstream meta(path.string() + ".meta");
  if (!meta)
    throw FormatError("missing sidecar '" + path.string() + ".meta'");
  Grid g;
  Unit unit = Unit::signal;
  std::string line;
  while (std::getline(meta, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "dims:") {
      ls >> g.dims[0] >> g.dims[1] >> g.dims[2];
    } else if (key == "spacing:") {
      ls >> g.spacing[0] >> g.spacing[1] >> g.spacing[2];
    } else if (key == "origin:") {
      ls >> g.origin[0] >> g.origin[1] >> g.origin[2];
    } else if (key == "orientation:") {
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) ls >> g.orientation(r, c);
    } else if (key == "unit:") {
      std::string u;
      ls >> u;
      unit = unit_from_string(u);
    }
    if (ls.fail()) throw FormatError("malformed sidecar line: '" + line + "'");
  }
  g.validate();

  std::ifstream raw(path, std::ios::binary);
  if (!raw) throw FormatError("cannot open '" + path.string() + "'");
  VolumeF v(g, unit);
  raw.read(reinterpret_cast<char*>(v.data.data()),
           static_cast<std::streamsize>(g.voxels() * sizeof(float)));
  if (!raw) throw FormatError("truncated raster in '" + path.string() + "'");
  return v;
}

}  // namespace rawio

/// Read a single 3-D volume; 4-D files must go through read_stack.
inline VolumeF read_volume(const std::filesystem::path& path,
                           VolumeFormat format) {
  if (format == VolumeFormat::raw_sidecar) return rawio::read_file(path);
  nifti::Contents c = nifti::read_file(path);
  if (c.channels != 1)
    throw FormatError("'" + path.string() +
                      "' holds " + std::to_string(c.channels) +
                      " channels; use read_stack");
  VolumeF v(c.grid, c.unit);
  std::copy(c.data.begin(), c.data.end(), v.data.data());
  return v;
}

inline VolumeF read_volume(const std::filesystem::path& path) {
  return read_volume(path, format_from_path(path));
}

inline void write_volume(const VolumeF& v, const std::filesystem::path& path,
                         VolumeFormat format, const std::string& note = "") {
  if (v.data.size() != v.grid.voxels())
    throw InvalidInput("write_volume: data length does not match grid");
  if (format == VolumeFormat::raw_sidecar) {
    rawio::write_file(path, v, note);
  } else {
    nifti::write_file(path, v.grid, 1, v.data.data(), v.unit, note);
  }
}

inline void write_volume(const VolumeF& v, const std::filesystem::path& path) {
  write_volume(v, path, format_from_path(path));
}

/// Multi-channel read/write: channels stored along NIfTI dim 4.
inline std::vector<VolumeF> read_stack_channels(const std::filesystem::path& path) {
  nifti::Contents c = nifti::read_file(path);
  std::vector<VolumeF> channels;
  channels.reserve(static_cast<std::size_t>(c.channels));
  for (int k = 0; k < c.channels; ++k) {
    VolumeF v(c.grid, c.unit);
    const std::size_t base = static_cast<std::size_t>(k) *
                             static_cast<std::size_t>(c.grid.voxels());
    std::copy(c.data.begin() + base,
              c.data.begin() + base + static_cast<std::size_t>(c.grid.voxels()),
              v.data.data());
    channels.push_back(std::move(v));
  }
  return channels;
}

inline void write_stack_channels(const std::vector<VolumeF>& channels,
                                 const std::filesystem::path& path,
                                 const std::string& note = "") {
  if (channels.empty()) throw InvalidInput("write_stack: no channels");
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(channels.size()) *
               static_cast<std::size_t>(channels[0].voxels()));
  for (const auto& ch : channels) {
    require_same_grid(ch, channels[0], "write_stack");
    data.insert(data.end(), ch.data.data(), ch.data.data() + ch.voxels());
  }
  nifti::write_file(path, channels[0].grid, static_cast<int>(channels.size()),
                    data.data(), channels[0].unit, note);
}

}  // namespace wbseg
