#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace simrec {

// ---------------------------------------------------------------------------
// Error hierarchy. The CLI maps these onto distinct exit codes.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad flag values, bad config files, out-of-range parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A referenced input file or record is missing or unreadable.
class InputError : public Error {
public:
    using Error::Error;
};

/// A remote backend (LLM or embedding endpoint) failed after retries.
class BackendError : public Error {
public:
    using Error::Error;
};

/// An internal invariant was violated; always a bug.
class InternalError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic hashing / seeding. All randomness in the pipeline flows from
// a single seed through these mixers; nothing reads OS entropy.
// ---------------------------------------------------------------------------

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ (splitmix64(b) + 0x9e3779b97f4a7c15ull));
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// ---------------------------------------------------------------------------
// String helpers used by the keyword pipeline and parsers.
// ---------------------------------------------------------------------------

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string collapse_whitespace(std::string_view s);
std::vector<std::string> split_any(std::string_view s, std::string_view separators);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_icase(std::string_view s, std::string_view prefix);

/// Canonical keyword form: trimmed, bracket/quote-stripped, lowercased,
/// inner whitespace collapsed. Returns empty string if nothing survives.
std::string normalize_keyword(std::string_view raw);

// ---------------------------------------------------------------------------
// Line-delimited JSON files.
// ---------------------------------------------------------------------------

/// Reads every non-blank line of a .jsonl file and passes (line_number, line)
/// to the callback. Throws InputError if the file cannot be opened.
void for_each_line(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const std::string&)>& fn);

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

std::string read_file(const std::filesystem::path& path);

}  // namespace simrec
