#ifndef SWEOCP_IO_HPP
#define SWEOCP_IO_HPP

/**
 * @file
 * @brief Binary matrix container shared by snapshots, bases and reduced operators.
 *
 * A file is a sequence of records. Each record is
 *
 *   magic   8 bytes  "SWEOCPMX"
 *   version uint32
 *   rows    uint64
 *   cols    uint64
 *   taglen  uint32, followed by taglen bytes of tag
 *   data    rows*cols float64, column-major
 *
 * All integers and floats are little-endian.
 */

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "sweocp/error.hpp"

namespace sweocp::io {

inline constexpr char kMagic[8]          = {'S', 'W', 'E', 'O', 'C', 'P', 'M', 'X'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template<typename T>
T to_le(T v)
{
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template<typename T>
void put(std::ostream & os, T v)
{
  v = to_le(v);
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template<typename T>
T get(std::istream & is)
{
  T v;
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!is) throw IoError("unexpected end of binary file");
  return to_le(v);
}

}  // namespace detail

struct Record
{
  std::string tag;
  Eigen::MatrixXd data;
};

inline void write_record(std::ostream & os, const std::string & tag, const Eigen::Ref<const Eigen::MatrixXd> & M)
{
  os.write(kMagic, sizeof(kMagic));
  detail::put<std::uint32_t>(os, kVersion);
  detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(M.rows()));
  detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(M.cols()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(tag.size()));
  os.write(tag.data(), static_cast<std::streamsize>(tag.size()));
  for (Eigen::Index c = 0; c < M.cols(); ++c)
    for (Eigen::Index r = 0; r < M.rows(); ++r) detail::put<double>(os, M(r, c));
  if (!os) throw IoError("write failed for record '" + tag + "'");
}

/// Reads one record; returns false at a clean end of file.
inline bool read_record(std::istream & is, Record & rec)
{
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() == 0 && is.eof()) return false;
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError("bad magic in binary file");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kVersion) throw IoError("unsupported binary file version " + std::to_string(version));
  const auto rows   = detail::get<std::uint64_t>(is);
  const auto cols   = detail::get<std::uint64_t>(is);
  const auto taglen = detail::get<std::uint32_t>(is);
  rec.tag.assign(taglen, '\0');
  is.read(rec.tag.data(), taglen);
  if (!is) throw IoError("truncated tag in binary file");
  rec.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char *>(rec.data.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
    if (!is) throw IoError("truncated data in record '" + rec.tag + "'");
  } else {
    for (Eigen::Index i = 0; i < rec.data.size(); ++i) rec.data.data()[i] = detail::get<double>(is);
  }
  return true;
}

/// Ordered tag -> matrix map written as consecutive records.
class Archive
{
public:
  void put(const std::string & tag, Eigen::MatrixXd M)
  {
    if (!index_.count(tag)) order_.push_back(tag);
    index_[tag] = std::move(M);
  }
  void put_scalar(const std::string & tag, double v) { put(tag, Eigen::MatrixXd::Constant(1, 1, v)); }

  bool contains(const std::string & tag) const { return index_.count(tag) != 0; }

  const Eigen::MatrixXd & get(const std::string & tag) const
  {
    const auto it = index_.find(tag);
    if (it == index_.end()) throw IoError("missing section '" + tag + "'");
    return it->second;
  }
  double get_scalar(const std::string & tag) const
  {
    const auto & M = get(tag);
    if (M.size() != 1) throw IoError("section '" + tag + "' is not a scalar");
    return M(0, 0);
  }

  const std::vector<std::string> & tags() const { return order_; }

  void save(const std::filesystem::path & path) const
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto & t : order_) write_record(os, t, index_.at(t));
  }

  static Archive load(const std::filesystem::path & path)
  {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifactError("cannot open " + path.string());
    Archive a;
    Record rec;
    while (read_record(is, rec)) a.put(rec.tag, std::move(rec.data));
    return a;
  }

private:
  std::vector<std::string> order_;
  std::map<std::string, Eigen::MatrixXd> index_;
};

inline void save_matrix(const std::filesystem::path & path, const std::string & tag,
                        const Eigen::Ref<const Eigen::MatrixXd> & M)
{
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_record(os, tag, M);
}

inline Record load_matrix(const std::filesystem::path & path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("cannot open " + path.string());
  Record rec;
  if (!read_record(is, rec)) throw IoError("empty binary file " + path.string());
  return rec;
}

}  // namespace sweocp::io

#endif  // SWEOCP_IO_HPP
