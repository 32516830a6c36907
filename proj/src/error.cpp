#include "abpm/error.hpp"

namespace abpm {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::grid: return "grid";
        case ErrorKind::rank: return "rank";
        case ErrorKind::domain: return "domain";
        case ErrorKind::knot: return "knot";
        case ErrorKind::spec: return "spec";
        case ErrorKind::conditioning: return "conditioning";
        case ErrorKind::contrast: return "contrast";
        case ErrorKind::state: return "state";
        case ErrorKind::argument: return "argument";
        case ErrorKind::schema: return "schema";
        case ErrorKind::parse: return "parse";
        case ErrorKind::duplicate: return "duplicate";
        case ErrorKind::config: return "config";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

}  // namespace abpm
