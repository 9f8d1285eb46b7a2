// see sibling modules
