#pragma once

// Shared file plumbing: CSV matrices with round-trip float formatting, JSON
// documents, content hashes.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace deepfpft {

/// Shortest decimal text that parses back to exactly `x`.
std::string format_double(double x);
double parse_double(std::string_view text);

std::vector<std::string> format_header(std::span<const double> values);

void write_matrix_csv(const std::filesystem::path& path,
                      std::span<const std::string> header,
                      const Eigen::MatrixXd& data);

struct CsvMatrix {
  std::vector<std::string> header;
  Eigen::MatrixXd data;
};

CsvMatrix read_matrix_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
/// Accepts // and /* */ comments.
nlohmann::json read_json(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace deepfpft
