#include "laq/dataset_store.hpp"

#include <curl/curl.h>
#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>

#include "laq/errors.hpp"

namespace laq::store {

namespace {

constexpr std::string_view kMnistBase = "https://storage.googleapis.com/cvdf-datasets/mnist/";

struct KnownDataset {
  std::string_view name;
  std::vector<std::string> files;
  std::vector<ManifestEntry> manifest;
};

const std::vector<KnownDataset>& known() {
  static const std::vector<KnownDataset> table = {
      {"mnist",
       {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte"},
       {{"440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609",
         "train-images-idx3-ubyte.gz"},
        {"3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c",
         "train-labels-idx1-ubyte.gz"},
        {"8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6",
         "t10k-images-idx3-ubyte.gz"},
        {"f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaaf5ae4d4d6e3ca8d",
         "t10k-labels-idx1-ubyte.gz"}}},
      {"ijcnn1", {"ijcnn1", "ijcnn1.t"}, {}},
      {"covtype", {"covtype"}, {}},
  };
  return table;
}

const KnownDataset& lookup(std::string_view name) {
  for (const auto& d : known()) {
    if (d.name == name) return d;
  }
  throw ConfigError("unknown dataset '" + std::string(name) + "' (known: mnist, ijcnn1, covtype)");
}

std::string hex(const unsigned char* data, unsigned int size) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * size);
  for (unsigned int i = 0; i < size; ++i) {
    out += digits[data[i] >> 4];
    out += digits[data[i] & 0xF];
  }
  return out;
}

struct DigestDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256: digest initialisation failed");
    }
  }
  void update(const void* data, std::size_t size) {
    if (EVP_DigestUpdate(ctx_.get(), data, size) != 1) {
      throw std::runtime_error("sha256: digest update failed");
    }
  }
  std::string finish() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int size = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &size) != 1) {
      throw std::runtime_error("sha256: digest finalisation failed");
    }
    return hex(md.data(), size);
  }

 private:
  std::unique_ptr<EVP_MD_CTX, DigestDeleter> ctx_;
};

std::size_t write_to_stream(char* data, std::size_t size, std::size_t count, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  out->write(data, static_cast<std::streamsize>(size * count));
  return *out ? size * count : 0;
}

void download(const std::string& url, const std::filesystem::path& target) {
  const auto partial = std::filesystem::path(target.string() + ".part");
  {
    std::ofstream out(partial, std::ios::binary);
    if (!out) throw DataError("cannot write " + partial.string());
    std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
    if (!curl) throw DataError("curl initialisation failed");
    char error[CURL_ERROR_SIZE] = {0};
    curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, error);
    curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_to_stream);
    curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &out);
    const CURLcode rc = curl_easy_perform(curl.get());
    if (rc != CURLE_OK) {
      out.close();
      std::filesystem::remove(partial);
      throw DataError("download of " + url + " failed: " +
                      (error[0] ? std::string(error) : curl_easy_strerror(rc)));
    }
  }
  std::filesystem::rename(partial, target);
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    ManifestEntry e;
    fields >> e.sha256 >> e.filename;
    if (!e.filename.empty() && e.filename.front() == '*') e.filename.erase(0, 1);
    const bool hex_ok = e.sha256.size() == 64 &&
                        e.sha256.find_first_not_of("0123456789abcdefABCDEF") == std::string::npos;
    if (!hex_ok || e.filename.empty()) {
      throw DataError("manifest line " + std::to_string(number) +
                      ": expected '<sha256>  <filename>'");
    }
    for (auto& c : e.sha256) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

std::vector<ManifestEntry> builtin_manifest(std::string_view dataset) {
  return lookup(dataset).manifest;
}

std::vector<std::string> required_files(std::string_view dataset) {
  return lookup(dataset).files;
}

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.finish();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.finish();
}

std::filesystem::path default_cache_dir() {
  if (const char* env = std::getenv("LAQ_CACHE_DIR"); env && *env) return env;
  return "data";
}

std::filesystem::path dataset_dir(const std::filesystem::path& cache, std::string_view dataset) {
  return cache / std::string(dataset);
}

CheckReport check(const std::filesystem::path& dir, const std::vector<ManifestEntry>& manifest) {
  CheckReport report;
  for (const auto& e : manifest) {
    const auto path = dir / e.filename;
    if (!std::filesystem::is_regular_file(path)) {
      report.ok = false;
      report.lines.push_back("MISSING " + path.string());
      continue;
    }
    const std::string actual = sha256_file(path);
    if (actual != e.sha256) {
      report.ok = false;
      report.lines.push_back("MISMATCH " + path.string() + " expected " + e.sha256 + " got " +
                             actual);
    } else {
      report.lines.push_back("OK " + path.string());
    }
  }
  return report;
}

CheckReport check_dataset(const std::filesystem::path& cache, std::string_view dataset) {
  const auto& d = lookup(dataset);
  const auto dir = dataset_dir(cache, dataset);
  CheckReport report;
  for (const auto& f : d.files) {
    const auto path = dir / f;
    const bool present = std::filesystem::is_regular_file(path) ||
                         std::filesystem::is_regular_file(path.string() + ".gz");
    if (!present) {
      report.ok = false;
      report.lines.push_back("MISSING " + path.string());
    }
  }
  const bool have_archives = std::all_of(d.manifest.begin(), d.manifest.end(), [&](const auto& e) {
    return std::filesystem::is_regular_file(dir / e.filename);
  });
  if (!d.manifest.empty() && have_archives) {
    auto digests = check(dir, d.manifest);
    report.ok = report.ok && digests.ok;
    report.lines.insert(report.lines.end(), digests.lines.begin(), digests.lines.end());
  } else if (report.ok) {
    report.lines.push_back("PRESENT " + dir.string());
  }
  return report;
}

void gunzip_file(const std::filesystem::path& source, const std::filesystem::path& target) {
  gzFile in = gzopen(source.string().c_str(), "rb");
  if (!in) throw DataError("cannot open " + source.string());
  std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(in, gzclose);
  const auto partial = std::filesystem::path(target.string() + ".part");
  std::ofstream out(partial, std::ios::binary);
  if (!out) throw DataError("cannot write " + partial.string());
  std::array<char, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(in, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int code = 0;
      const char* message = gzerror(in, &code);
      out.close();
      std::filesystem::remove(partial);
      throw DataError(source.string() + ": " + (message ? message : "corrupt gzip stream"));
    }
    if (n == 0) break;
    out.write(buf.data(), n);
  }
  out.close();
  if (!out) throw DataError("write failed for " + partial.string());
  std::filesystem::rename(partial, target);
}

void fetch(const std::filesystem::path& cache, std::string_view dataset, std::ostream& log) {
  const auto& d = lookup(dataset);
  if (d.manifest.empty()) {
    throw DataError("dataset '" + std::string(dataset) +
                    "' has no pinned download; place its files under " +
                    dataset_dir(cache, dataset).string());
  }
  const auto dir = dataset_dir(cache, dataset);
  std::filesystem::create_directories(dir);
  static const bool curl_ready = curl_global_init(CURL_GLOBAL_DEFAULT) == CURLE_OK;
  if (!curl_ready) throw DataError("curl global initialisation failed");
  for (const auto& e : d.manifest) {
    const auto path = dir / e.filename;
    if (!std::filesystem::is_regular_file(path) || sha256_file(path) != e.sha256) {
      const std::string url = std::string(kMnistBase) + e.filename;
      log << "fetching " << url << '\n';
      download(url, path);
    }
    const std::string actual = sha256_file(path);
    if (actual != e.sha256) {
      throw DataError("checksum mismatch for " + path.string() + ": expected " + e.sha256 +
                      ", got " + actual);
    }
    auto raw = path;
    raw.replace_extension();
    if (!std::filesystem::is_regular_file(raw)) gunzip_file(path, raw);
    log << "ok " << raw.string() << '\n';
  }
}

}  // namespace laq::store
