#pragma once

#include <iosfwd>

namespace stamp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;

/// Entry point of the stamp command; report tables go to `out` unless --out
/// is given, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stamp::cli
