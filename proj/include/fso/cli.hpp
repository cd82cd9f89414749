#pragma once

namespace fso {

/// Entry point of the fsolink tool. Exit codes: 0 success, 1 usage or
/// validation error, 2 I/O error.
int cli_main(int argc, char** argv);

}  // namespace fso
