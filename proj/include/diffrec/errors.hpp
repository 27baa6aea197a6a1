#pragma once

#include <stdexcept>

namespace diffrec {

// Bad user input: config values, CLI arguments, malformed data files.
// Distinguished from runtime failures so callers can map exit codes.
class ValidationError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace diffrec
