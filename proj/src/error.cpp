#include "alq/error.hpp"

namespace alq {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::malformed_record: return "MalformedRecord";
    case Errc::duplicate_id: return "DuplicateId";
    case Errc::bad_magic: return "BadMagic";
    case Errc::truncated_payload: return "TruncatedPayload";
    case Errc::value_out_of_range: return "ValueOutOfRange";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::missing_ref: return "MissingRef";
    case Errc::index_out_of_range: return "IndexOutOfRange";
    case Errc::kind_mismatch: return "KindMismatch";
    case Errc::too_few_members: return "TooFewMembers";
    case Errc::empty_pool: return "EmptyPool";
    case Errc::not_enough_items: return "NotEnoughItems";
    case Errc::degenerate_distribution: return "DegenerateDistribution";
    case Errc::pool_too_large_for_dense: return "PoolTooLargeForDense";
    case Errc::solver_divergence: return "SolverDivergence";
    case Errc::invalid_spec: return "InvalidSpec";
    case Errc::pool_exhausted: return "PoolExhausted";
    case Errc::degenerate_training: return "DegenerateTraining";
    case Errc::bad_config: return "BadConfig";
    case Errc::io_error: return "IoError";
  }
  return "UnknownError";
}

}  // namespace alq
