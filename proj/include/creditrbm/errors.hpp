#ifndef CREDITRBM_ERRORS_HPP
#define CREDITRBM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace creditrbm {

// Invalid or malformed inputs: bad files, dimension mismatches, out-of-range
// arguments. CLI maps these to exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures of the numerics themselves: non-convergence, NaN/Inf blowups,
// estimators out of their resolvable range. CLI maps these to exit code 4.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

#define CRBM_REQUIRE(cond, msg)                        \
    do {                                               \
        if (!(cond)) throw ::creditrbm::DataError(msg); \
    } while (0)

} // namespace creditrbm

#endif
