#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace annot {

// The four annotation protocols: rating scale (one text per prompt), rating
// scale over a 4-tuple, paired comparison, and best-worst scaling.
enum class Protocol { rs, rs_t, pc, bws };

std::string_view to_string(Protocol p);
Protocol protocol_from_string(std::string_view s);

// Number of texts a single prompt carries for the protocol.
std::size_t prompt_width(Protocol p);

inline bool is_comparative(Protocol p) { return p == Protocol::pc || p == Protocol::bws; }

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the source and line number.
class ParseError : public Error {
public:
    ParseError(std::string_view source, std::size_t line, std::string_view what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class DesignError : public Error {
public:
    using Error::Error;
};

class PromptError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class UndefinedCorrelation : public Error {
public:
    using Error::Error;
};

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

} // namespace annot
