#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace yoto {

// Exit codes: 0 success, 1 validation/runtime failure, 2 usage error.
// Failures print one line to `err`:  error kind=<kind> msg="<text>"
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, char** argv);

}  // namespace yoto
