#pragma once

#include <stdexcept>
#include <string>

namespace dse {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Byte sequence is not a canonical encoding: truncated, trailing bytes, bad
// counts, unsorted sets, or values that violate a type invariant.
struct MalformedHeader : Error {
  using Error::Error;
};

// Trace file line does not parse as a known record.
struct MalformedTrace : Error {
  using Error::Error;
};

// Speculative state the caller depends on was removed by a rollback.
struct RolledBack : Error {
  using Error::Error;
};

struct DuplicateConnect : Error {
  using Error::Error;
};

struct CoordinatorUnreachable : Error {
  using Error::Error;
};

struct NoActiveAction : Error {
  using Error::Error;
};

// A rollback plan arrived out of failure-sequence order.
struct OutOfOrderRollback : Error {
  using Error::Error;
};

struct WorkflowRolledBack : Error {
  using Error::Error;
};

struct TxAborted : Error {
  using Error::Error;
};

// Scenario or CLI input is inconsistent.
struct InvalidSpec : Error {
  using Error::Error;
};

// An invariant tripped inside a simulated scenario; always a bug.
struct ScenarioPanic : Error {
  using Error::Error;
};

// Simulated RPC did not complete before its deadline.
struct TimeoutError : Error {
  using Error::Error;
};

// Resumed simulation work belongs to an incarnation that has crashed.
struct CrashedInterrupt : Error {
  using Error::Error;
};

}  // namespace dse
