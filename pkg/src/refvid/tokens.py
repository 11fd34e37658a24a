"""Reserved token literals.

These strings are a wire format: the data pipeline emits them into JSONL
conversations, the tokenizer reserves vocabulary slots for them, and the
grounding parser consumes them. They must stay byte-identical everywhere.
"""

REGION_TOKEN = "<region>"
SEG_TOKEN = "[SEG]"
PHRASE_OPEN = "<p>"
PHRASE_CLOSE = "</p>"

PAD_TOKEN = "<pad>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"


def region_ref(object_id: str) -> str:
    """Tagged form used in dataset records: ``<region:obj_id>``."""
    return f"<region:{object_id}>"


def seg_ref(object_id: str) -> str:
    """Tagged form used in dataset records: ``[SEG:obj_id]``."""
    return f"[SEG:{object_id}]"
