"""Launch a small human-oracle labeling run plus its HTTP service, for the
end-to-end client script. Runs until killed."""

import sys
import tempfile
import threading

import uvicorn

from guidedlabel import nn
from guidedlabel.augment import AugmentPolicy
from guidedlabel.data import Dataset, make_pools
from guidedlabel.demo import make_digit_corpus
from guidedlabel.loop import ScheduleConfig, StopRule, run
from guidedlabel.service import HumanOracle, create_app
from guidedlabel.training import TrainConfig

service_dir = sys.argv[1]
port = int(sys.argv[2])

imgs, labs = make_digit_corpus(400, 0)
ds = Dataset(imgs, labs, [str(i) for i in range(10)], train_count=350)
pool = make_pools(ds, initial_labeled=20, validation=50, seed=1)
cfg = TrainConfig(batch_size=16, patience_epochs=2, max_epochs=3,
                  policy=AugmentPolicy(target_size=(28, 28)))
run_dir = tempfile.mkdtemp()
app = create_app(service_dir, ds, run_dir=run_dir)
threading.Thread(
    target=lambda: uvicorn.run(app, host="127.0.0.1", port=port,
                               log_level="warning"),
    daemon=True).start()
oracle = HumanOracle(service_dir, ds.num_classes, poll_interval=0.2)
state = run("guided", ds, pool, nn.preset("mlp"), cfg,
            ScheduleConfig("exponential", s=20), k=2, oracle=oracle,
            stop=StopRule(max_iterations=2), out_dir=run_dir, root_seed=1)
print("RUN_COMPLETE iterations=%d labeled=%d"
      % (state.iteration, len(state.pool.labeled_ids)), flush=True)
