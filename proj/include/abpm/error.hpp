#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace abpm {

enum class ErrorKind {
    grid,
    rank,
    domain,
    knot,
    spec,
    conditioning,
    contrast,
    state,
    argument,
    schema,
    parse,
    duplicate,
    config,
    io,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to a stable, machine-parsable reason.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace abpm
