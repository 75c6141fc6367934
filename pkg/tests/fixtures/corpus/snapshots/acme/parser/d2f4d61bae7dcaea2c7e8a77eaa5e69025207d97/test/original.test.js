function checkFoo(t) {
  t.equal(foo(1), bar(4));
}
