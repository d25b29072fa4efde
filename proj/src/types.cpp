#include "annot/types.hpp"

#include <array>
#include <openssl/evp.h>

#include <fmt/format.h>

namespace annot {

std::string_view to_string(Protocol p) {
    switch (p) {
    case Protocol::rs: return "rs";
    case Protocol::rs_t: return "rs_t";
    case Protocol::pc: return "pc";
    case Protocol::bws: return "bws";
    }
    return "?";
}

Protocol protocol_from_string(std::string_view s) {
    if (s == "rs") return Protocol::rs;
    if (s == "rs_t" || s == "rs-t") return Protocol::rs_t;
    if (s == "pc") return Protocol::pc;
    if (s == "bws") return Protocol::bws;
    throw ConfigError(fmt::format("unknown protocol '{}' (expected rs, rs_t, pc or bws)", s));
}

std::size_t prompt_width(Protocol p) {
    switch (p) {
    case Protocol::rs: return 1;
    case Protocol::pc: return 2;
    case Protocol::rs_t:
    case Protocol::bws: return 4;
    }
    return 0;
}

ParseError::ParseError(std::string_view source, std::size_t line, std::string_view what)
    : Error(fmt::format("{}:{}: {}", source, line, what)), line_(line) {}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr);
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

} // namespace annot
