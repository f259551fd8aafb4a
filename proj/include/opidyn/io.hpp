#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace opidyn {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a 64-bit; used for config and artifact checksums in run manifests.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t fnv1a64_file(const std::filesystem::path& p);

// Shortest-roundtrip decimal formatting; keeps CSV output byte-stable.
std::string format_double(double v);

// RFC-4180-style CSV, LF line endings, header row of symbol names.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);
    void add_row(const std::vector<double>& row);
    void add_row_mixed(const std::vector<std::string>& row);
    void write(const std::filesystem::path& p) const;
    const std::string& content() const { return body_; }

private:
    std::size_t n_cols_;
    std::string body_;
};

void write_text_file(const std::filesystem::path& p, const std::string& content);

struct ManifestEntry {
    std::string file;
    std::uint64_t checksum = 0;
};

// Per-run provenance: hash of the effective config, tool version, seed and
// checksums of every artifact the run produced.
struct RunManifest {
    std::string subcommand;
    std::uint64_t config_hash = 0;
    std::uint64_t base_seed = 0;
    double wall_clock_s = 0.0;
    std::vector<ManifestEntry> outputs;

    void add_output(const std::filesystem::path& p);
    void write(const std::filesystem::path& p) const;
};

}  // namespace opidyn
