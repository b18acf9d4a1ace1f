#include "fedfdia/common.hpp"

#include <array>
#include <charconv>
#include <system_error>

namespace fedfdia {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ fnv1a64(stream));
    return splitmix64(h ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::string format_double(double value) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) {
        throw ConfigError("cannot format value");
    }
    return std::string(buf.data(), end);
}

double parse_double(std::string_view text, std::string_view what) {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw ConfigError("invalid number for " + std::string(what) + ": '" + std::string(text) + "'");
    }
    return value;
}

long long parse_int(std::string_view text, std::string_view what) {
    long long value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
        throw ConfigError("invalid integer for " + std::string(what) + ": '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace fedfdia
