from . import vocab
from .codec import NoteEvent, PitchRangeError, detokenize, tokenize, transpose
from .smf import SmfParseError, read_smf, write_smf
from .vocab import BOS, EOS, PAD, VOCAB_SIZE, PerformanceToken, describe, index_of, token_of
