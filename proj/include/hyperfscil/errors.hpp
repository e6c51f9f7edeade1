#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hyperfscil {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class NumericalError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class LabelError : public Error { public: using Error::Error; };
class DeterminismError : public Error { public: using Error::Error; };
class ProtocolError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };

class DatasetError : public Error { public: using Error::Error; };

// CSV parse failures carry the 1-based line number of the offending row.
class DatasetParseError : public DatasetError {
public:
    DatasetParseError(std::size_t line, const std::string& what)
        : DatasetError("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class RaggedRowError : public DatasetParseError { public: using DatasetParseError::DatasetParseError; };
class NonNumericFeatureError : public DatasetParseError { public: using DatasetParseError::DatasetParseError; };
class ClassIdError : public DatasetParseError { public: using DatasetParseError::DatasetParseError; };

} // namespace hyperfscil
