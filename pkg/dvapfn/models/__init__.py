# Domain types package
