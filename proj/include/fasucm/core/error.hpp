#pragma once

#include <stdexcept>
#include <string>

namespace fasucm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
public:
	using Error::Error;
};

/// Missing or unusable configuration (weights file, detector backend, config keys).
class ConfigError : public Error {
public:
	using Error::Error;
};

class IoError : public Error {
public:
	using Error::Error;
};

/// Input had a malformed structure (directory layout, file format).
class ParseError : public Error {
public:
	using Error::Error;
};

/// An input source or record list was empty where content is required.
class EmptyInputError : public Error {
public:
	using Error::Error;
};

class DuplicateRecordError : public ParseError {
public:
	using ParseError::ParseError;
};

/// An optimisation produced a non-finite loss.
class DivergenceError : public Error {
public:
	DivergenceError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
	std::size_t step() const noexcept { return step_; }

private:
	std::size_t step_;
};

/// A pipeline stage was run before the stage it depends on.
class PrerequisiteError : public Error {
public:
	using Error::Error;
};

#define FASUCM_REQUIRE(cond, msg)                                                                  \
	do {                                                                                           \
		if (!(cond)) throw ::fasucm::ContractError(msg);                                           \
	} while (0)

} // namespace fasucm
