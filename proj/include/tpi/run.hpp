#ifndef TPI_RUN_HPP_
#define TPI_RUN_HPP_

#include <string>

#include "tpi/checkpoint.hpp"
#include "tpi/config.hpp"

namespace tpi {

/// The parameters in a checkpoint do not fit the game its config describes.
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// A checkpoint rebuilt into a usable game plus final parameters.
struct LoadedRun {
  RunConfig config;
  Game game;
  Snapshot snapshot;
  long iteration = 0;
  bool ablated = false;
};

inline LoadedRun load_run(const std::string& path) {
  const json payload = load_checkpoint_payload(path);
  if (!payload.contains("config") || !payload.contains("trainer")) {
    throw CheckpointIntegrityError("checkpoint lacks config or trainer state");
  }
  RunConfig config = parse_config(payload.at("config"));
  Game game = config.make_game();
  LoadedRun run{std::move(config), std::move(game), {}, 0, false};
  try {
    const json& t = payload.at("trainer");
    run.snapshot = params_from_json(t.at("params"));
    run.iteration = t.at("iteration").get<long>();
  } catch (const json::exception& e) {
    throw CheckpointIntegrityError(std::string("malformed checkpoint payload: ") + e.what());
  }
  run.ablated = run.config.train.ablate_disturbance;
  if (!(run.snapshot.value.layout == run.game.value->layout()) ||
      !(run.snapshot.control.layout == run.game.control->layout()) ||
      !(run.snapshot.disturbance.layout == run.game.disturbance->layout())) {
    throw CheckpointMismatchError("checkpoint parameters do not match the configured approximators");
  }
  return run;
}

/// Controller (u = π(x; θ)) of a loaded run.
inline Controller controller_of(const LoadedRun& run) {
  return Controller{run.game.control.get(), run.snapshot.control};
}

}  // namespace tpi

#endif  // TPI_RUN_HPP_
