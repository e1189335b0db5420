#include "deepfpft/io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "deepfpft/errors.hpp"

namespace deepfpft {

namespace fs = std::filesystem;

std::string format_double(double x) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (ec != std::errc()) throw IoError("cannot format floating-point value");
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r' || text.back() == '\t'))
    text.remove_suffix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw IoError("malformed number '" + std::string(text) + "'");
  return value;
}

std::vector<std::string> format_header(std::span<const double> values) {
  std::vector<std::string> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(format_double(v));
  return out;
}

void write_matrix_csv(const fs::path& path, std::span<const std::string> header,
                      const Eigen::MatrixXd& data) {
  if (!header.empty() && static_cast<Eigen::Index>(header.size()) != data.cols())
    throw ShapeError("CSV header width does not match data width for " + path.string());
  std::string out;
  out.reserve(static_cast<std::size_t>(data.size()) * 24 + 64);
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j) out += ',';
    out += header[j];
  }
  if (!header.empty()) out += '\n';
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      if (j) out += ',';
      out += format_double(data(i, j));
    }
    out += '\n';
  }
  write_text(path, out);
}

CsvMatrix read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  CsvMatrix result;
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      auto comma = rest.find(',');
      cells.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (first) {
      // Every file written here has a header row (time-grid headers are
      // numeric, so it cannot be sniffed).
      first = false;
      for (auto c : cells) result.header.emplace_back(c);
      continue;
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto c : cells) row.push_back(parse_double(c));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ShapeError("ragged CSV row in " + path.string());
    rows.push_back(std::move(row));
  }
  const auto n_cols = rows.empty() ? result.header.size() : rows.front().size();
  if (!result.header.empty() && n_cols != result.header.size())
    throw ShapeError("CSV rows do not match header width in " + path.string());
  result.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_cols));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < n_cols; ++j)
      result.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return result;
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Write to a sibling temp file and rename so readers never see a torn file.
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

}  // namespace deepfpft
