#pragma once

#include <stdexcept>
#include <string>

namespace habitmask {

// Root of every error raised by the library. Callers that only care about
// "something went wrong in habitmask" catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define HABITMASK_DEFINE_ERROR(Name)              \
    class Name : public Error {                   \
    public:                                       \
        using Error::Error;                       \
    }

HABITMASK_DEFINE_ERROR(ShapeError);
HABITMASK_DEFINE_ERROR(ContractError);
HABITMASK_DEFINE_ERROR(IndexError);
HABITMASK_DEFINE_ERROR(EmptyInput);
HABITMASK_DEFINE_ERROR(InvalidGeometry);
HABITMASK_DEFINE_ERROR(SchemaError);
HABITMASK_DEFINE_ERROR(InvariantError);
HABITMASK_DEFINE_ERROR(FormatError);
HABITMASK_DEFINE_ERROR(SplitError);
HABITMASK_DEFINE_ERROR(IoError);
HABITMASK_DEFINE_ERROR(NumericError);

#undef HABITMASK_DEFINE_ERROR

// Malformed annotation line; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace habitmask
