"""JavaScript tokenizer, function extractor and static metrics."""
