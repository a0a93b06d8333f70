#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lensnvs/cli.hpp"
#include "lensnvs/random.hpp"

#ifndef LENSNVS_VERSION
#define LENSNVS_VERSION "0.0.0"
#endif

namespace lensnvs::cli {

namespace fs = std::filesystem;

const char* tool_version() { return LENSNVS_VERSION; }

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_feed(std::uint64_t& h, const char* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= kFnvPrime;
  }
}

void fnv_file(std::uint64_t& h, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof buf);
    fnv_feed(h, buf, static_cast<std::size_t>(in.gcount()));
  }
}

}  // namespace

std::string hash_path(const fs::path& path) {
  std::uint64_t h = kFnvOffset;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), path));
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      // Run manifests are outputs, not inputs.
      if (f.filename() == "run_manifest.txt") continue;
      const std::string rel = f.generic_string();
      fnv_feed(h, rel.data(), rel.size() + 1);
      fnv_file(h, path / f);
    }
  } else if (fs::is_regular_file(path)) {
    fnv_file(h, path);
  } else {
    throw std::runtime_error("no such input: " + path.string());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunManifest::to_text() const {
  std::ostringstream os;
  os << "# lensnvs run manifest\n"
     << "# subcommand: " << subcommand << '\n'
     << "# version: " << tool_version() << '\n'
     << "# seed: " << seed << '\n';
  for (const auto& [path, hash] : inputs) os << "# input: " << path << " fnv1a64=" << hash << '\n';
  os << config;
  if (!config.empty() && config.back() != '\n') os << '\n';
  return os.str();
}

}  // namespace lensnvs::cli
