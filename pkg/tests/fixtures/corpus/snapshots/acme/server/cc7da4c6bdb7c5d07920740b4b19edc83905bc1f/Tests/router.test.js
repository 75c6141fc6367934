describe('router', function () {
  it('renders', function () {
    render('x');
  });
});
