#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mvcir {

/// Entry point behind the mvcir binary. Exit codes: 0 success, 2 usage
/// error, 1 runtime error. Reports go to `out`, errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mvcir
