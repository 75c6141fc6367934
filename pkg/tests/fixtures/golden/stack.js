class Stack {
  push(item) {
    this.items.push(item);
    return this;
  }
}
