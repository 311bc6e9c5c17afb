#pragma once

#include <stdexcept>
#include <string>

namespace alq {

enum class Errc {
  malformed_record,
  duplicate_id,
  bad_magic,
  truncated_payload,
  value_out_of_range,
  dimension_mismatch,
  missing_ref,
  index_out_of_range,
  kind_mismatch,
  too_few_members,
  empty_pool,
  not_enough_items,
  degenerate_distribution,
  pool_too_large_for_dense,
  solver_divergence,
  invalid_spec,
  pool_exhausted,
  degenerate_training,
  bad_config,
  io_error,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
public:
  Error(Errc code, std::string message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        message_(std::move(message)) {}

  Errc code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

private:
  Errc code_;
  std::string message_;
};

[[noreturn]] inline void raise(Errc code, std::string message) {
  throw Error(code, std::move(message));
}

}  // namespace alq
