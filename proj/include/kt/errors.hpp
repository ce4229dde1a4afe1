#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kt {

// Error categories partition failures disjointly; the CLI maps each one
// to a distinct exit code.
enum class ErrorCategory { input, model, numerical, resource };

std::string_view to_string(ErrorCategory c) noexcept;

// Exit codes: 0 success, 2 input, 3 model, 4 numerical, 5 resource.
int exit_code(ErrorCategory c) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

struct InputError : Error {
  explicit InputError(const std::string& what) : Error(ErrorCategory::input, what) {}
};

// Violated caller contract (e.g. asking for a certified bound without a
// certificate). Reported as an input error.
struct ContractError : Error {
  explicit ContractError(const std::string& what)
      : Error(ErrorCategory::input, "contract: " + what) {}
};

struct ModelError : Error {
  explicit ModelError(const std::string& what) : Error(ErrorCategory::model, what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what)
      : Error(ErrorCategory::numerical, what) {}
};

struct ResourceError : Error {
  explicit ResourceError(const std::string& what)
      : Error(ErrorCategory::resource, what) {}
};

// Rethrows e as the same error type with `context` prepended to the message.
[[noreturn]] void rethrow_with_context(const Error& e, const std::string& context);

}  // namespace kt
