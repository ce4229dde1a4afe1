#include "kt/errors.hpp"

namespace kt {

std::string_view to_string(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::input: return "input";
    case ErrorCategory::model: return "model";
    case ErrorCategory::numerical: return "numerical";
    case ErrorCategory::resource: return "resource";
  }
  return "unknown";
}

int exit_code(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::input: return 2;
    case ErrorCategory::model: return 3;
    case ErrorCategory::numerical: return 4;
    case ErrorCategory::resource: return 5;
  }
  return 1;
}

void rethrow_with_context(const Error& e, const std::string& context) {
  const std::string what = context + e.what();
  if (dynamic_cast<const ContractError*>(&e)) throw Error(ErrorCategory::input, what);
  switch (e.category()) {
    case ErrorCategory::input: throw InputError(what);
    case ErrorCategory::model: throw ModelError(what);
    case ErrorCategory::numerical: throw NumericalError(what);
    case ErrorCategory::resource: throw ResourceError(what);
  }
  throw Error(e.category(), what);
}

}  // namespace kt
