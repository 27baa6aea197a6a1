#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "diffrec/config.hpp"

namespace diffrec {

// Names of the rows an ablation run produces, in output order: decode-order
// sweep, step-count sweep over the divisors of M, attention-pattern sweep.
std::vector<std::string> ablation_plan(int M);

// Executes one named stage against the config. Throws ValidationError for
// bad inputs and std::runtime_error for execution failures.
void run_subcommand(const std::string& name, RunConfig& cfg, std::ostream& out);

const std::vector<std::string>& subcommand_names();

}  // namespace diffrec
