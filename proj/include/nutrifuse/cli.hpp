#pragma once

namespace nf {

// full command-line front end; returns the process exit status
// (0 success, 1 config error, 2 data error, 3 runtime error)
int run_cli(int argc, char** argv);

}  // namespace nf
