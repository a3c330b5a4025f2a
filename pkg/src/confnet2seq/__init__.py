"""ConfNet2Seq: full-length answer generation from spoken-question
confusion networks and factoid answers.

Subpackages and modules:

* ``confnet`` -- sausage/JSON parsing, normalization, noise pruning,
  best-hypothesis extraction, width/entropy stats.
* ``numcore`` -- float64 tensors with reverse-mode autodiff, the LSTM cell,
  SGD/Adam with decay and clipping, checkpoint I/O.
* ``encoder`` -- the confusion-network encoder (graph to vector sequence).
* ``model`` -- shared bi-LSTM encoders, decoder with global attention,
  graph and text copy heads, mixture output, loss, greedy/beam decoding.
* ``data`` -- manifest ingestion, vocabularies, embeddings, batching.
* ``metrics`` -- BLEU, ROUGE-1/2/L, WER.
* ``cli`` -- the ``confnet2seq`` command.
"""

__version__ = "0.1.0"
