#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace yoto {

enum class ErrorKind {
  dimension,
  numeric,
  argument,
  precondition,
  config,
  name,
  missing_head,
  length,
  consistency,
  index,
  parse,
  version,
  invariant,
  lineage,
  shape,
  format,
  integrity,
  corruption,
  io,
  split_role,
  conflict,
};

std::string_view to_string(ErrorKind kind);

// Every module reports failures through this type; `kind()` is the stable,
// machine-readable part, `what()` carries the human detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace yoto
