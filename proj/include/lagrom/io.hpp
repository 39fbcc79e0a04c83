#pragma once

// On-disk formats: binary snapshot files, the self-describing ROM archive,
// CSV emit/ingest with provenance headers.

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "lagrom/reduce.hpp"
#include "lagrom/rom.hpp"
#include "lagrom/spml.hpp"

namespace lagrom::io {

struct FileFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
}
inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), std::streamsize(n));
  if (!is) throw FileFormatError("unexpected end of file");
}
template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  put_bytes(os, &v, sizeof v);
}
template <class T>
T get(std::istream& is) {
  T v;
  get_bytes(is, &v, sizeof v);
  return v;
}
inline void put_mat(std::ostream& os, const Mat& m) {
  put<std::int64_t>(os, m.rows());
  put<std::int64_t>(os, m.cols());
  put_bytes(os, m.data(), sizeof(double) * std::size_t(m.size()));
}
inline Mat get_mat(std::istream& is) {
  const auto rows = get<std::int64_t>(is);
  const auto cols = get<std::int64_t>(is);
  if (rows < 0 || cols < 0 || rows * cols > (1LL << 32))
    throw FileFormatError("corrupt matrix header");
  Mat m(rows, cols);
  get_bytes(is, m.data(), sizeof(double) * std::size_t(m.size()));
  return m;
}
inline void put_vec(std::ostream& os, const Vec& v) {
  put<std::int64_t>(os, v.size());
  put_bytes(os, v.data(), sizeof(double) * std::size_t(v.size()));
}
inline Vec get_vec(std::istream& is) {
  const auto n = get<std::int64_t>(is);
  if (n < 0 || n > (1LL << 32)) throw FileFormatError("corrupt vector header");
  Vec v(n);
  get_bytes(is, v.data(), sizeof(double) * std::size_t(n));
  return v;
}
inline void put_str(std::ostream& os, const std::string& s) {
  put<std::int64_t>(os, std::int64_t(s.size()));
  put_bytes(os, s.data(), s.size());
}
inline std::string get_str(std::istream& is) {
  const auto n = get<std::int64_t>(is);
  if (n < 0 || n > (1 << 20)) throw FileFormatError("corrupt string header");
  std::string s(std::size_t(n), '\0');
  if (n > 0) get_bytes(is, s.data(), std::size_t(n));
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------- snapshots

struct Snapshot {
  double dt = 0.0;
  Mat Q;  // n x K, column per time step
};

inline constexpr char kSnapshotMagic[4] = {'L', 'G', 'S', 'N'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline void write_snapshot(const std::string& path, const Snapshot& snap) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FileFormatError("cannot open for writing: " + path);
  detail::put_bytes(os, kSnapshotMagic, 4);
  detail::put(os, kSnapshotVersion);
  detail::put<std::int64_t>(os, snap.Q.rows());
  detail::put<std::int64_t>(os, snap.Q.cols());
  detail::put(os, snap.dt);
  detail::put_bytes(os, snap.Q.data(), sizeof(double) * std::size_t(snap.Q.size()));
  if (!os) throw FileFormatError("write failed: " + path);
}

inline Snapshot read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileFormatError("cannot open: " + path);
  char magic[4];
  detail::get_bytes(is, magic, 4);
  if (std::memcmp(magic, kSnapshotMagic, 4) != 0)
    throw FileFormatError("not a snapshot file: " + path);
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kSnapshotVersion)
    throw FileFormatError("unsupported snapshot version");
  const auto n = detail::get<std::int64_t>(is);
  const auto K = detail::get<std::int64_t>(is);
  if (n < 1 || K < 1 || n * K > (1LL << 33))
    throw FileFormatError("corrupt snapshot header");
  Snapshot snap;
  snap.dt = detail::get<double>(is);
  snap.Q.resize(n, K);
  detail::get_bytes(is, snap.Q.data(), sizeof(double) * std::size_t(n * K));
  return snap;
}

// -------------------------------------------------------------- ROM archive

inline constexpr char kRomMagic[4] = {'L', 'G', 'R', 'A'};
inline constexpr std::uint32_t kRomVersion = 1;

struct RomArchiveMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string note;  // e.g. the boundary-mask convention used
};

struct ModelArch {
  std::vector<int> hidden;
  int n_mlps = 1;
  std::vector<int> degrees;
  bool use_TNN = false;
  bool use_FNN = true;
};

inline void write_rom(const std::string& path, const rom::LagrangianRom& lrom,
                      const ModelArch& arch, const RomArchiveMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FileFormatError("cannot open for writing: " + path);
  detail::put_bytes(os, kRomMagic, 4);
  detail::put(os, kRomVersion);
  detail::put<std::uint8_t>(os, std::uint8_t(lrom.kind));
  detail::put_mat(os, lrom.basis.V_r);
  detail::put_vec(os, lrom.basis.singular_values);
  detail::put_mat(os, lrom.lin.K);
  detail::put<std::uint8_t>(os, lrom.lin.C.has_value() ? 1 : 0);
  if (lrom.lin.C) detail::put_mat(os, *lrom.lin.C);
  detail::put(os, lrom.lin.eps);
  detail::put(os, lrom.lin.residual_norm);

  detail::put<std::uint8_t>(os, lrom.has_model ? 1 : 0);
  if (lrom.has_model) {
    detail::put<std::int64_t>(os, std::int64_t(arch.hidden.size()));
    for (int h : arch.hidden) detail::put<std::int32_t>(os, h);
    detail::put<std::int32_t>(os, arch.n_mlps);
    detail::put<std::int64_t>(os, std::int64_t(arch.degrees.size()));
    for (int d : arch.degrees) detail::put<std::int32_t>(os, d);
    detail::put<std::uint8_t>(os, arch.use_TNN ? 1 : 0);
    detail::put<std::uint8_t>(os, arch.use_FNN ? 1 : 0);
    detail::put_vec(os, lrom.model.pack());
  }
  detail::put(os, meta.seed);
  detail::put_str(os, meta.config_hash);
  detail::put_str(os, meta.note);
  if (!os) throw FileFormatError("write failed: " + path);
}

struct RomArchive {
  rom::LagrangianRom rom;
  ModelArch arch;
  RomArchiveMeta meta;
};

inline RomArchive read_rom(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileFormatError("cannot open: " + path);
  char magic[4];
  detail::get_bytes(is, magic, 4);
  if (std::memcmp(magic, kRomMagic, 4) != 0)
    throw FileFormatError("not a ROM archive: " + path);
  if (detail::get<std::uint32_t>(is) != kRomVersion)
    throw FileFormatError("unsupported ROM archive version");

  RomArchive ar;
  ar.rom.kind = rom::Kind(detail::get<std::uint8_t>(is));
  ar.rom.basis.V_r = detail::get_mat(is);
  ar.rom.basis.singular_values = detail::get_vec(is);
  ar.rom.basis.r = int(ar.rom.basis.V_r.cols());
  ar.rom.lin.K = detail::get_mat(is);
  ar.rom.lin.r = int(ar.rom.lin.K.rows());
  if (detail::get<std::uint8_t>(is)) ar.rom.lin.C = detail::get_mat(is);
  ar.rom.lin.eps = detail::get<double>(is);
  ar.rom.lin.residual_norm = detail::get<double>(is);

  if (detail::get<std::uint8_t>(is)) {
    const auto nh = detail::get<std::int64_t>(is);
    for (std::int64_t i = 0; i < nh; ++i)
      ar.arch.hidden.push_back(detail::get<std::int32_t>(is));
    ar.arch.n_mlps = detail::get<std::int32_t>(is);
    const auto nd = detail::get<std::int64_t>(is);
    for (std::int64_t i = 0; i < nd; ++i)
      ar.arch.degrees.push_back(detail::get<std::int32_t>(is));
    ar.arch.use_TNN = detail::get<std::uint8_t>(is) != 0;
    ar.arch.use_FNN = detail::get<std::uint8_t>(is) != 0;

    spml::Architecture sa;
    sa.hidden = ar.arch.hidden;
    sa.n_mlps = ar.arch.n_mlps;
    sa.degrees = std::set<int>(ar.arch.degrees.begin(), ar.arch.degrees.end());
    sa.use_TNN = ar.arch.use_TNN;
    sa.use_FNN = ar.arch.use_FNN;
    ar.rom.model = spml::make_model(ar.rom.lin.r, sa);
    ar.rom.model.unpack(detail::get_vec(is));
    ar.rom.has_model = true;
  }
  ar.meta.seed = detail::get<std::uint64_t>(is);
  ar.meta.config_hash = detail::get_str(is);
  ar.meta.note = detail::get_str(is);
  return ar;
}

// ---------------------------------------------------------------------- CSV

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct CsvMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string extra;  // optional additional header line
};

inline constexpr const char* kToolVersion = "1.0.0";

// '#'-prefixed provenance header, then a column-name row, then full-precision
// float64 data rows
inline void write_csv(const std::string& path,
                      const std::vector<std::string>& columns, const Mat& data,
                      const CsvMeta& meta) {
  if (std::size_t(data.cols()) != columns.size())
    throw DimensionMismatch("write_csv: column name count mismatch");
  std::ofstream os(path);
  if (!os) throw FileFormatError("cannot open for writing: " + path);
  os << "# lagrom " << kToolVersion << "\n";
  os << "# config_hash " << (meta.config_hash.empty() ? "-" : meta.config_hash)
     << "\n";
  os << "# seed " << meta.seed << "\n";
  if (!meta.extra.empty()) os << "# " << meta.extra << "\n";
  for (std::size_t j = 0; j < columns.size(); ++j)
    os << columns[j] << (j + 1 < columns.size() ? "," : "\n");
  char buf[64];
  for (int i = 0; i < data.rows(); ++i)
    for (int j = 0; j < data.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data(i, j));
      os << buf << (j + 1 < data.cols() ? ',' : '\n');
    }
  if (!os) throw FileFormatError("write failed: " + path);
}

// Numeric CSV ingest. '#' comment lines and a single leading non-numeric
// header row are skipped; ragged rows and non-finite cells are rejected with
// their location.
inline Mat read_csv_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FileFormatError("cannot open: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  long lineno = 0;
  bool header_allowed = true;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    long col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      // strtod rather than stod: subnormal values must parse, not throw
      const char* cs = cell.c_str();
      char* end = nullptr;
      const double v = std::strtod(cs, &end);
      while (end && *end != '\0' && std::isspace(*end)) ++end;
      if (end == cs || *end != '\0') {
        if (header_allowed) {
          numeric = false;
          break;
        }
        throw FileFormatError("non-numeric cell at line " +
                              std::to_string(lineno) + ", column " +
                              std::to_string(col));
      }
      if (!std::isfinite(v))
        throw FileFormatError("non-finite value at line " +
                              std::to_string(lineno) + ", column " +
                              std::to_string(col));
      row.push_back(v);
    }
    if (!numeric) {
      header_allowed = false;
      continue;
    }
    header_allowed = false;
    if (!rows.empty() && row.size() != rows.front().size())
      throw FileFormatError("ragged row at line " + std::to_string(lineno) +
                            ": " + std::to_string(row.size()) + " cells vs " +
                            std::to_string(rows.front().size()));
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FileFormatError("no numeric data in " + path);
  Mat m(long(rows.size()), long(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.front().size(); ++j)
      m(long(i), long(j)) = rows[i][j];
  return m;
}

// K-rows-by-n-columns displacement CSV -> n x K snapshot at dt = 1/fs
inline Snapshot ingest_csv(const std::string& path, double fs) {
  if (fs <= 0.0) throw std::invalid_argument("ingest_csv: fs must be > 0");
  Snapshot snap;
  snap.Q = read_csv_matrix(path).transpose();
  snap.dt = 1.0 / fs;
  return snap;
}

}  // namespace lagrom::io
