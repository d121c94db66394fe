"""splitloc: split-inference offloading toolkit for DNN camera relocalization."""
