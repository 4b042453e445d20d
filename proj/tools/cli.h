#ifndef NCM_TOOLS_CLI_H_
#define NCM_TOOLS_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

namespace ncm::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;
inline constexpr int kNumeric = 3;

// args[0] is the program name.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err);

}  // namespace ncm::cli

#endif  // NCM_TOOLS_CLI_H_
