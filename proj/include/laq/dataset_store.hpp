#pragma once
// On-disk dataset cache: pinned checksums, integrity checks and the one
// network path in the project (fetch).

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace laq::store {

struct ManifestEntry {
  std::string sha256;  // lowercase hex
  std::string filename;

  bool operator==(const ManifestEntry&) const = default;
};

/// `sha256  filename` lines; blank lines and '#' comments are ignored.
std::vector<ManifestEntry> parse_manifest(std::istream& in);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

/// Pinned checksums for the fetchable datasets; empty for datasets that must
/// be placed by hand. Throws ConfigError for unknown names.
std::vector<ManifestEntry> builtin_manifest(std::string_view dataset);

/// Files a dataset needs on disk, relative to `<cache>/<name>/`.
std::vector<std::string> required_files(std::string_view dataset);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// `$LAQ_CACHE_DIR` when set, else `data`.
std::filesystem::path default_cache_dir();
std::filesystem::path dataset_dir(const std::filesystem::path& cache, std::string_view dataset);

struct CheckReport {
  bool ok = true;
  std::vector<std::string> lines;
};

/// Every manifest entry must exist under `dir` with a matching digest.
CheckReport check(const std::filesystem::path& dir, const std::vector<ManifestEntry>& manifest);

/// Presence of the required files, then the pinned digests.
CheckReport check_dataset(const std::filesystem::path& cache, std::string_view dataset);

/// Decompresses a gzip file; throws DataError on corrupt input.
void gunzip_file(const std::filesystem::path& source, const std::filesystem::path& target);

/// Downloads the pinned files into `<cache>/<name>/`, verifies them and
/// unpacks the gzip members. Throws DataError on network or digest failure.
void fetch(const std::filesystem::path& cache, std::string_view dataset, std::ostream& log);

}  // namespace laq::store
