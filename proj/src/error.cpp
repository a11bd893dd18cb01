#include "yoto/error.hpp"

namespace yoto {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::argument: return "argument";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::config: return "config";
    case ErrorKind::name: return "name";
    case ErrorKind::missing_head: return "missing_head";
    case ErrorKind::length: return "length";
    case ErrorKind::consistency: return "consistency";
    case ErrorKind::index: return "index";
    case ErrorKind::parse: return "parse";
    case ErrorKind::version: return "version";
    case ErrorKind::invariant: return "invariant";
    case ErrorKind::lineage: return "lineage";
    case ErrorKind::shape: return "shape";
    case ErrorKind::format: return "format";
    case ErrorKind::integrity: return "integrity";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::io: return "io";
    case ErrorKind::split_role: return "split_role";
    case ErrorKind::conflict: return "conflict";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

}  // namespace yoto
